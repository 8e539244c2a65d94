//! Reconstruction and link-quality metrics.

use crate::error::{CoreError, Result};
use crate::scene::ProbeRegion;
use crate::tensor::Tensor;

/// Returned by [`psnr`] when the two inputs are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(estimate: &Tensor, reference: &Tensor) -> Result<f64> {
    estimate.check_same_dims(reference)?;
    let n = estimate.len() as f64;
    Ok(estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(estimate: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(estimate, reference)?, peak))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode Gaussian filter of a `h × w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * img[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h × w` planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::SsimTooSmall(h, w));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let e_aa = filter_valid(&aa, h, w, &g);
    let e_bb = filter_valid(&bb, h, w, &g);
    let e_ab = filter_valid(&ab, h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM (11×11 Gaussian window, σ = 1.5, peak 1), averaged over the slices
/// of the last axis for rank-3 inputs.
pub fn ssim(estimate: &Tensor, reference: &Tensor) -> Result<f64> {
    estimate.check_same_dims(reference)?;
    let (h, w, c) = estimate.cube_dims()?;
    let mut acc = 0.0;
    for k in 0..c {
        let a: Vec<f64> = (0..h * w).map(|p| estimate.data()[p * c + k] as f64).collect();
        let b: Vec<f64> = (0..h * w).map(|p| reference.data()[p * c + k] as f64).collect();
        acc += ssim_plane(&a, &b, h, w, 1.0)?;
    }
    Ok(acc / c as f64)
}

/// Sum of squared differences between two spectra.
pub fn spectral_error(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(CoreError::SizeMismatch(estimate.len(), reference.len()));
    }
    Ok(estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Mean spectrum (or temporal profile) over a rectangular region.
pub fn probe_spectrum(cube: &Tensor, region: &ProbeRegion) -> Result<Vec<f64>> {
    let (h, w, c) = cube.cube_dims()?;
    let y1 = region.y0 + region.height;
    let x1 = region.x0 + region.width;
    if region.height == 0 || region.width == 0 || y1 > h || x1 > w {
        return Err(CoreError::Config(format!("probe region '{}' outside {h}x{w}", region.name)));
    }
    let mut acc = vec![0.0; c];
    for y in region.y0..y1 {
        for x in region.x0..x1 {
            for (k, a) in acc.iter_mut().enumerate() {
                *a += cube.data()[(y * w + x) * c + k] as f64;
            }
        }
    }
    let n = (region.height * region.width) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Symbols per voxel: `symbols / (h · w · c)`.
pub fn dcr(symbols: usize, cube: (usize, usize, usize)) -> f64 {
    symbols as f64 / (cube.0 * cube.1 * cube.2) as f64
}

/// Fraction of differing bits.
pub fn ber(sent: &[u8], received: &[u8]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(CoreError::SizeMismatch(sent.len(), received.len()));
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub scheme: String,
    pub snr_db: String,
    pub dcr: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Spectral error per named probe, in probe order.
    pub se: Vec<(String, f64)>,
    pub ber: Option<f64>,
    /// Milliseconds per stage, in pipeline order.
    pub timings: Vec<(String, f64)>,
}

impl MetricsRecord {
    pub fn total_ms(&self) -> f64 {
        self.timings
            .iter()
            .find(|(k, _)| k == "total")
            .map(|(_, v)| *v)
            .unwrap_or_else(|| self.timings.iter().map(|(_, v)| v).sum())
    }

    /// Element-wise mean of records sharing scheme and SNR.
    pub fn average(records: &[MetricsRecord]) -> Option<MetricsRecord> {
        let first = records.first()?;
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Some(MetricsRecord {
            scheme: first.scheme.clone(),
            snr_db: first.snr_db.clone(),
            dcr: mean(&|r| r.dcr),
            psnr_db: mean(&|r| r.psnr_db),
            ssim: mean(&|r| r.ssim),
            se: first
                .se
                .iter()
                .enumerate()
                .map(|(i, (k, _))| (k.clone(), mean(&|r| r.se[i].1)))
                .collect(),
            ber: first.ber.map(|_| mean(&|r| r.ber.unwrap_or(0.0))),
            timings: first
                .timings
                .iter()
                .enumerate()
                .map(|(i, (k, _))| (k.clone(), mean(&|r| r.timings[i].1)))
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (-1.0..=1.0).contains(&self.ssim)
            && self.dcr > 0.0
            && self.ber.is_none_or(|b| (0.0..=1.0).contains(&b));
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("metrics record out of range: {self:?}")))
        }
    }
}
