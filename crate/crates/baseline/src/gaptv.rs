//! Generalized alternating projection with anisotropic total-variation
//! denoising for coded-aperture measurements.

use icci_core::sensing::SensingModel;
use icci_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapTvConfig {
    pub iters: usize,
    pub tv_weight: f64,
    /// Dual projection steps per denoising call.
    pub tv_iters: usize,
}

impl Default for GapTvConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            tv_weight: 0.02,
            tv_iters: 10,
        }
    }
}

impl GapTvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.tv_iters == 0 || !(self.tv_weight >= 0.0) {
            return Err(ScError::InvalidConfig(format!("invalid gap-tv settings {self:?}")));
        }
        Ok(())
    }
}

/// Reconstruction plus the data-fidelity residual `‖y − Hx_k‖₂` after
/// every projection.
#[derive(Debug, Clone)]
pub struct GapTvOutput {
    pub estimate: Tensor,
    pub residuals: Vec<f64>,
}

fn check(m: &Tensor, model: &SensingModel, dims: (usize, usize, usize)) -> Result<Vec<f64>> {
    model.check_cube_dims(dims)?;
    let (h, wm) = model.measurement_dims(dims);
    if m.dims() != [h, wm] {
        return Err(icci_core::CoreError::DimMismatch {
            expected: vec![h, wm],
            actual: m.dims().to_vec(),
        }
        .into());
    }
    let phi = model.gram_diagonal(dims);
    if phi.iter().all(|&p| p == 0.0) {
        return Err(ScError::SingularMask);
    }
    Ok(phi)
}

/// `x + Hᵀ Φ⁻¹ (y − H x)` with pixels of zero gram diagonal left untouched.
fn project(x: &mut [f64], y: &[f64], phi: &[f64], model: &SensingModel, dims: (usize, usize, usize)) -> f64 {
    let hx = model.apply(x, dims);
    let r: Vec<f64> = y
        .iter()
        .zip(&hx)
        .zip(phi)
        .map(|((a, b), &p)| if p > 0.0 { (a - b) / p } else { 0.0 })
        .collect();
    let corr = model.adjoint(&r, dims);
    for (v, c) in x.iter_mut().zip(corr) {
        *v += c;
    }
    let hx = model.apply(x, dims);
    y.iter().zip(hx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `Hᵀ Φ⁻¹ y`: the least-norm consistent cube.
pub fn adjoint_baseline(m: &Tensor, model: &SensingModel, dims: (usize, usize, usize)) -> Result<Tensor> {
    let phi = check(m, model, dims)?;
    let y = m.to_f64();
    let mut x = vec![0.0; dims.0 * dims.1 * dims.2];
    project(&mut x, &y, &phi, model, dims);
    for v in &mut x {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Tensor::from_f64(vec![dims.0, dims.1, dims.2], &x)?)
}

/// Anisotropic TV proximal step on one `h × w` plane via projected
/// gradient on the dual.
pub fn tv_denoise(v: &[f64], h: usize, w: usize, weight: f64, iters: usize) -> Vec<f64> {
    if weight == 0.0 {
        return v.to_vec();
    }
    let mut px = vec![0.0; h * w];
    let mut py = vec![0.0; h * w];
    let mut x = v.to_vec();
    let step = 1.0 / (8.0 * weight);
    for _ in 0..iters {
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                if j + 1 < w {
                    px[k] = (px[k] + step * (x[k + 1] - x[k])).clamp(-1.0, 1.0);
                }
                if i + 1 < h {
                    py[k] = (py[k] + step * (x[k + w] - x[k])).clamp(-1.0, 1.0);
                }
            }
        }
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let mut dtp = 0.0;
                if j + 1 < w {
                    dtp -= px[k];
                }
                if j > 0 {
                    dtp += px[k - 1];
                }
                if i + 1 < h {
                    dtp -= py[k];
                }
                if i > 0 {
                    dtp += py[k - w];
                }
                x[k] = v[k] - weight * dtp;
            }
        }
    }
    x
}

fn denoise_cube(x: &[f64], dims: (usize, usize, usize), weight: f64, iters: usize) -> Vec<f64> {
    let (h, w, c) = dims;
    let mut out = vec![0.0; x.len()];
    let mut plane = vec![0.0; h * w];
    for b in 0..c {
        for (p, v) in plane.iter_mut().enumerate() {
            *v = x[p * c + b];
        }
        let d = tv_denoise(&plane, h, w, weight, iters);
        for (p, v) in d.into_iter().enumerate() {
            out[p * c + b] = v;
        }
    }
    out
}

pub fn gaptv_with_trace(
    m: &Tensor,
    model: &SensingModel,
    dims: (usize, usize, usize),
    cfg: &GapTvConfig,
) -> Result<GapTvOutput> {
    cfg.validate()?;
    let phi = check(m, model, dims)?;
    let y = m.to_f64();
    let mut x = vec![0.0; dims.0 * dims.1 * dims.2];
    project(&mut x, &y, &phi, model, dims);
    let mut residuals = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        x = denoise_cube(&x, dims, cfg.tv_weight, cfg.tv_iters);
        residuals.push(project(&mut x, &y, &phi, model, dims));
    }
    for v in &mut x {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(GapTvOutput {
        estimate: Tensor::from_f64(vec![dims.0, dims.1, dims.2], &x)?,
        residuals,
    })
}

/// Cube estimate clipped to `[0, 1]`.
pub fn gaptv_reconstruct(
    m: &Tensor,
    model: &SensingModel,
    dims: (usize, usize, usize),
    cfg: &GapTvConfig,
) -> Result<Tensor> {
    Ok(gaptv_with_trace(m, model, dims, cfg)?.estimate)
}
