//! Architecture configuration and DCR-driven sizing.

use icci_core::channel::Domain;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Spectral,
    Video,
}

fn yes() -> bool {
    true
}
fn default_conv3d() -> usize {
    8
}
fn default_domain() -> Domain {
    Domain::Real
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub height: usize,
    /// Measurement width before padding to a multiple of `2^k`.
    pub meas_width: usize,
    pub width: usize,
    /// Spectral bands or video frames.
    pub bands: usize,
    pub k: usize,
    pub c_out: usize,
    pub trb_count: usize,
    #[serde(default = "yes")]
    pub ssa: bool,
    #[serde(default = "yes")]
    pub ial: bool,
    pub base_width: usize,
    #[serde(default)]
    pub include_mask: bool,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default = "yes")]
    pub activations: bool,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default = "default_conv3d")]
    pub conv3d_features: usize,
}

impl ArchConfig {
    /// Defaults for the given geometry: base width 64, three blocks per stage,
    /// attention and importance layers on.
    pub fn new(variant: Variant, cube: (usize, usize, usize), meas_width: usize, k: usize, c_out: usize) -> Self {
        Self {
            variant,
            height: cube.0,
            meas_width,
            width: cube.1,
            bands: cube.2,
            k,
            c_out,
            trb_count: 3,
            ssa: true,
            ial: true,
            base_width: 64,
            include_mask: variant == Variant::Video,
            batch_norm: true,
            activations: true,
            domain: Domain::Real,
            conv3d_features: 8,
        }
    }

    pub fn scale(&self) -> usize {
        1 << self.k
    }

    /// Measurement width after zero padding to a multiple of `2^k`.
    pub fn padded_width(&self) -> usize {
        self.meas_width.div_ceil(self.scale()) * self.scale()
    }

    /// Latent grid `(rows, cols)`.
    pub fn latent_dims(&self) -> (usize, usize) {
        (self.height / self.scale(), self.padded_width() / self.scale())
    }

    /// Real values emitted per scene.
    pub fn latent_len(&self) -> usize {
        let (r, c) = self.latent_dims();
        r * c * self.c_out
    }

    /// Channel uses per scene.
    pub fn symbol_count(&self) -> usize {
        match self.domain {
            Domain::Real => self.latent_len(),
            Domain::Complex => self.latent_len() / 2,
        }
    }

    pub fn cube_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn dcr(&self) -> f64 {
        icci_core::metrics::dcr(self.symbol_count(), self.cube_dims())
    }

    /// Channels fed to the encoder's first layer.
    pub fn encoder_inputs(&self) -> usize {
        match (self.variant, self.include_mask) {
            (_, false) => 1,
            (Variant::Spectral, true) => 2,
            (Variant::Video, true) => 1 + self.bands,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if !(1..=6).contains(&self.k) {
            return bad(format!("k = {} outside 1..=6", self.k));
        }
        let s = self.scale();
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad("zero cube dimension".into());
        }
        if !self.height.is_multiple_of(s) || !self.width.is_multiple_of(s) {
            return bad(format!("{}x{} not divisible by 2^{}", self.height, self.width, self.k));
        }
        if self.meas_width < self.width {
            return bad("measurement narrower than the cube".into());
        }
        if self.c_out == 0 || self.latent_len() == 0 {
            return bad("empty latent".into());
        }
        if self.domain == Domain::Complex && !self.latent_len().is_multiple_of(2) {
            return bad("complex symbols need an even latent length".into());
        }
        if self.base_width < 4 || !self.base_width.is_multiple_of(4) {
            return bad(format!("base_width {} must be a positive multiple of 4", self.base_width));
        }
        if self.conv3d_features == 0 {
            return bad("conv3d_features must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).expect("arch config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcrChoice {
    pub k: usize,
    pub c_out: usize,
    pub symbols: usize,
    pub achieved: f64,
}

/// Picks `(k, c_out)` with `k ∈ 1..=4`, `c_out ∈ 1..=64` whose ratio is closest
/// to `target`; ties go to the larger `k`. Stages whose factor does not divide
/// the cube's height and width are skipped.
pub fn compute_arch_for_dcr(
    cube: (usize, usize, usize),
    meas_width: usize,
    target: f64,
    domain: Domain,
) -> Result<DcrChoice> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(ModelError::InvalidArch(format!("target dcr {target} must be positive")));
    }
    let (h, w, c) = cube;
    let voxels = (h * w * c) as f64;
    let mut best: Option<DcrChoice> = None;
    for k in 1..=4usize {
        let s = 1 << k;
        if h % s != 0 || w % s != 0 {
            continue;
        }
        let cells = (h / s) * meas_width.div_ceil(s);
        for c_out in 1..=64 {
            let len = cells * c_out;
            if domain == Domain::Complex && len % 2 != 0 {
                continue;
            }
            let symbols = if domain == Domain::Complex { len / 2 } else { len };
            let achieved = symbols as f64 / voxels;
            let better = match best {
                None => true,
                Some(b) => {
                    let (d, db) = ((achieved - target).abs(), (b.achieved - target).abs());
                    d < db || (d == db && k > b.k)
                }
            };
            if better {
                best = Some(DcrChoice {
                    k,
                    c_out,
                    symbols,
                    achieved,
                });
            }
        }
    }
    match best {
        Some(b) if b.achieved >= target / 2.0 && b.achieved <= target * 2.0 => Ok(b),
        other => Err(ModelError::NoFeasibleDcr {
            target,
            best: other.map_or(f64::NAN, |b| b.achieved),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_arithmetic() {
        let a = ArchConfig::new(Variant::Spectral, (32, 32, 8), 32, 2, 4);
        assert_eq!(a.latent_len(), 256);
        let b = ArchConfig::new(Variant::Spectral, (32, 32, 8), 39, 4, 27);
        assert_eq!(b.padded_width(), 48);
        assert_eq!(b.latent_len(), 162);
        assert_eq!(b.dcr(), 162.0 / 8192.0);
    }

    #[test]
    fn exact_target_is_hit() {
        let c = compute_arch_for_dcr((32, 32, 8), 32, 256.0 / 8192.0, Domain::Real).unwrap();
        assert_eq!(c.achieved, 256.0 / 8192.0);
    }

    #[test]
    fn full_scale_target() {
        let c = compute_arch_for_dcr((256, 256, 27), 256 + 26, 0.005, Domain::Real).unwrap();
        assert!((0.0025..=0.01).contains(&c.achieved), "{c:?}");
    }

    #[test]
    fn infeasible_target_errors() {
        assert!(matches!(
            compute_arch_for_dcr((16, 16, 1), 16, 100.0, Domain::Real),
            Err(ModelError::NoFeasibleDcr { .. })
        ));
        assert!(compute_arch_for_dcr((16, 16, 1), 16, -1.0, Domain::Real).is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = ArchConfig::new(Variant::Spectral, (32, 32, 8), 39, 4, 27);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.trb_count = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
