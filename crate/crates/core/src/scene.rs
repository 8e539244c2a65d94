//! Synthetic scenes standing in for hyperspectral and high-speed video datasets.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Gaussian blobs, each with its own smooth spectral signature.
    SpectralBlobs,
    /// Rigid rectangles and discs translating across frames.
    MovingShapes,
}

/// Named rectangle used for spectral probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRegion {
    pub name: String,
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    /// Spectral bands or video frames.
    pub depth: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of blobs or shapes; ignored when `palette` is non-empty.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Spectral signatures (one per blob, `depth` entries each) for
    /// spectral-blobs, or `[dx, dy]` motion vectors for moving-shapes.
    #[serde(default)]
    pub palette: Vec<Vec<f32>>,
    #[serde(default)]
    pub probes: Vec<ProbeRegion>,
}

fn default_count() -> usize {
    4
}

/// Largest per-frame displacement of a moving shape, in pixels.
pub const MAX_SHIFT_PER_FRAME: f64 = 3.0;

impl SceneSpec {
    pub fn spectral_blobs(height: usize, width: usize, bands: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::SpectralBlobs,
            height,
            width,
            depth: bands,
            seed,
            count: default_count(),
            palette: Vec::new(),
            probes: Vec::new(),
        }
    }

    pub fn moving_shapes(height: usize, width: usize, frames: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::MovingShapes,
            ..Self::spectral_blobs(height, width, frames, seed)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.depth == 0 {
            return Err(CoreError::SceneTooSmall(vec![self.height, self.width, self.depth]));
        }
        match self.kind {
            SceneKind::SpectralBlobs => {
                for sig in &self.palette {
                    if sig.len() != self.depth || sig.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                        return Err(CoreError::Config(format!(
                            "spectral signature must hold {} nonnegative values",
                            self.depth
                        )));
                    }
                }
            }
            SceneKind::MovingShapes => {
                for v in &self.palette {
                    let ok = v.len() == 2
                        && v.iter().all(|c| c.is_finite())
                        && (v[0] as f64).hypot(v[1] as f64) <= MAX_SHIFT_PER_FRAME + 1e-9;
                    if !ok {
                        return Err(CoreError::Config(format!(
                            "motion vector {v:?} must be [dx, dy] with norm <= {MAX_SHIFT_PER_FRAME}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Renders a `height × width × depth` cube with values in `[0, 1]`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let data = match spec.kind {
        SceneKind::SpectralBlobs => spectral_blobs(spec, &mut rng),
        SceneKind::MovingShapes => moving_shapes(spec, &mut rng),
    };
    Tensor::from_f64(vec![spec.height, spec.width, spec.depth], &data)
}

/// Smooth bump over the band axis on top of a floor, peak value 1.
fn random_signature(bands: usize, rng: &mut Rng) -> Vec<f64> {
    let center = rng.next_uniform() * bands as f64;
    let spread = (0.25 + 0.5 * rng.next_uniform()) * bands as f64;
    let floor = 0.2 * rng.next_uniform();
    (0..bands)
        .map(|c| {
            let d = (c as f64 + 0.5 - center) / spread;
            floor + (1.0 - floor) * (-0.5 * d * d).exp()
        })
        .collect()
}

fn spectral_blobs(spec: &SceneSpec, rng: &mut Rng) -> Vec<f64> {
    let (h, w, c) = (spec.height, spec.width, spec.depth);
    let signatures: Vec<Vec<f64>> = if spec.palette.is_empty() {
        (0..spec.count).map(|_| random_signature(c, rng)).collect()
    } else {
        spec.palette
            .iter()
            .map(|s| s.iter().map(|&v| v as f64).collect())
            .collect()
    };
    let scale = h.min(w) as f64;
    let mut cube = vec![0.0f64; h * w * c];
    for sig in &signatures {
        let cy = rng.next_uniform() * h as f64;
        let cx = rng.next_uniform() * w as f64;
        let radius = scale * (0.1 + 0.15 * rng.next_uniform());
        let amp = 0.5 + 0.5 * rng.next_uniform();
        let inv = 1.0 / (2.0 * radius * radius);
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let g = amp * (-(dx * dx + dy * dy) * inv).exp();
                let px = &mut cube[(y * w + x) * c..(y * w + x + 1) * c];
                for (v, s) in px.iter_mut().zip(sig) {
                    *v += g * s;
                }
            }
        }
    }
    for v in &mut cube {
        *v = v.clamp(0.0, 1.0);
    }
    cube
}

enum Shape {
    Rect { half_h: f64, half_w: f64 },
    Disc { radius: f64 },
}

fn moving_shapes(spec: &SceneSpec, rng: &mut Rng) -> Vec<f64> {
    let (h, w, frames) = (spec.height, spec.width, spec.depth);
    let n = if spec.palette.is_empty() {
        spec.count
    } else {
        spec.palette.len()
    };
    let scale = h.min(w) as f64;
    let background = 0.1;
    let shapes: Vec<(Shape, f64, f64, f64, f64, f64)> = (0..n)
        .map(|i| {
            let size = scale * (0.12 + 0.2 * rng.next_uniform());
            let shape = if rng.next_uniform() < 0.5 {
                Shape::Rect {
                    half_h: size * 0.5,
                    half_w: size * (0.3 + 0.4 * rng.next_uniform()),
                }
            } else {
                Shape::Disc { radius: size * 0.5 }
            };
            let intensity = 0.3 + 0.7 * rng.next_uniform();
            let y0 = rng.next_uniform() * h as f64;
            let x0 = rng.next_uniform() * w as f64;
            let (dx, dy) = if spec.palette.is_empty() {
                let speed = MAX_SHIFT_PER_FRAME * rng.next_uniform();
                let angle = std::f64::consts::TAU * rng.next_uniform();
                (speed * angle.cos(), speed * angle.sin())
            } else {
                (spec.palette[i][0] as f64, spec.palette[i][1] as f64)
            };
            (shape, intensity, y0, x0, dy, dx)
        })
        .collect();
    let mut cube = vec![background; h * w * frames];
    for b in 0..frames {
        for (shape, intensity, y0, x0, dy, dx) in &shapes {
            let cy = y0 + dy * b as f64;
            let cx = x0 + dx * b as f64;
            for y in 0..h {
                for x in 0..w {
                    let py = y as f64 + 0.5 - cy;
                    let px = x as f64 + 0.5 - cx;
                    let inside = match shape {
                        Shape::Rect { half_h, half_w } => py.abs() <= *half_h && px.abs() <= *half_w,
                        Shape::Disc { radius } => py * py + px * px <= radius * radius,
                    };
                    if inside {
                        cube[(y * w + x) * frames + b] = *intensity;
                    }
                }
            }
        }
    }
    cube
}
