//! Discretized coded-aperture sensing.
//!
//! Cubes are `height × width × depth` row-major tensors, `depth` being
//! spectral bands (CASSI) or video frames (CACTI). Measurements are
//! `height × meas_width` with `meas_width = width + (bands - 1) * step`
//! for CASSI and `width` for CACTI.
//!
//! CASSI uses the single-disperser discretization: voxel `(i, j, c)` is
//! modulated by the base mask at `(i, j)` and lands on detector pixel
//! `(i, j + c * step)`. CACTI sums per-frame masked frames.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ict::read_tensor;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Upper bound on explicitly stored sensing-matrix entries.
pub const MAX_MATRIX_NONZEROS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Binary,
    Graylevel,
}

/// How `generate_mask` fills its entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPattern {
    Bernoulli,
    AllOnes,
    AllZeros,
}

/// Coded aperture, stored as `height × width × slices`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pattern: Tensor,
    kind: MaskKind,
}

impl Mask {
    /// Wraps a `h × w` or `h × w × slices` pattern, checking the codomain.
    pub fn new(pattern: Tensor, kind: MaskKind) -> Result<Self> {
        let pattern = match pattern.dims() {
            &[h, w] => pattern.reshape(vec![h, w, 1])?,
            &[_, _, _] => pattern,
            other => return Err(CoreError::InvalidDims(other.to_vec())),
        };
        let ok = match kind {
            MaskKind::Binary => pattern.data().iter().all(|&v| v == 0.0 || v == 1.0),
            MaskKind::Graylevel => pattern.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
        };
        if !ok {
            return Err(CoreError::SensingMismatch(format!(
                "mask values outside the {kind:?} codomain"
            )));
        }
        Ok(Self { pattern, kind })
    }

    pub fn pattern(&self) -> &Tensor {
        &self.pattern
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.pattern.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.pattern.dims()[1]
    }

    pub fn slices(&self) -> usize {
        self.pattern.dims()[2]
    }

    /// Entry `(i, j)` of slice `s`.
    #[inline]
    pub fn at(&self, i: usize, j: usize, s: usize) -> f32 {
        self.pattern.data()[(i * self.width() + j) * self.slices() + s]
    }
}

/// Draws a `height × width × slices` mask; a Bernoulli entry is 1 when the
/// uniform draw is below `p`, drawn in row-major order.
pub fn generate_mask(
    height: usize,
    width: usize,
    slices: usize,
    p: f64,
    seed: u64,
    pattern: MaskPattern,
) -> Result<Mask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::InvalidProbability(p));
    }
    let n = height * width * slices;
    let data = match pattern {
        MaskPattern::AllOnes => vec![1.0; n],
        MaskPattern::AllZeros => vec![0.0; n],
        MaskPattern::Bernoulli => {
            let mut rng = Rng::new(seed);
            (0..n)
                .map(|_| if rng.next_uniform() < p { 1.0 } else { 0.0 })
                .collect()
        }
    };
    Mask::new(Tensor::new(vec![height, width, slices], data)?, MaskKind::Binary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensingKind {
    Cassi,
    Cacti,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingModel {
    pub kind: SensingKind,
    pub mask: Mask,
    /// Pixels of shift per band (CASSI only).
    pub dispersion_step: usize,
    /// Standard deviation of the additive sensor noise.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: Tensor,
    pub model_id: u64,
}

impl SensingModel {
    pub fn cassi(mask: Mask, dispersion_step: usize, noise_std: f64) -> Self {
        Self {
            kind: SensingKind::Cassi,
            mask,
            dispersion_step,
            noise_std,
        }
    }

    pub fn cacti(mask: Mask, noise_std: f64) -> Self {
        Self {
            kind: SensingKind::Cacti,
            mask,
            dispersion_step: 0,
            noise_std,
        }
    }

    /// FNV-1a digest of the model, recorded in measurements it produces.
    pub fn id(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(&[self.kind as u8]);
        eat(&(self.dispersion_step as u64).to_le_bytes());
        eat(&self.noise_std.to_le_bytes());
        for &d in self.mask.pattern.dims() {
            eat(&(d as u64).to_le_bytes());
        }
        for &v in self.mask.pattern.data() {
            eat(&v.to_le_bytes());
        }
        h
    }

    /// Measurement dims `(height, meas_width)` for a cube of the given dims.
    pub fn measurement_dims(&self, cube: (usize, usize, usize)) -> (usize, usize) {
        let (h, w, c) = cube;
        match self.kind {
            SensingKind::Cassi => (h, w + c.saturating_sub(1) * self.dispersion_step),
            SensingKind::Cacti => (h, w),
        }
    }

    pub fn check_cube_dims(&self, cube: (usize, usize, usize)) -> Result<()> {
        let (h, w, c) = cube;
        if h != self.mask.height() || w != self.mask.width() {
            return Err(CoreError::SensingMismatch(format!(
                "cube {h}x{w} vs mask {}x{}",
                self.mask.height(),
                self.mask.width()
            )));
        }
        match self.kind {
            SensingKind::Cassi if self.mask.slices() != 1 => Err(CoreError::SensingMismatch(
                "cassi needs a single-slice base mask".into(),
            )),
            SensingKind::Cacti if self.mask.slices() != c => Err(CoreError::SensingMismatch(
                format!("cacti mask has {} slices for {c} frames", self.mask.slices()),
            )),
            _ => Ok(()),
        }
    }

    /// Noiseless `H · x` on a row-major cube.
    pub fn apply(&self, cube: &[f64], dims: (usize, usize, usize)) -> Vec<f64> {
        let (h, w, c) = dims;
        let (_, wm) = self.measurement_dims(dims);
        let mut y = vec![0.0; h * wm];
        for i in 0..h {
            for j in 0..w {
                let px = &cube[(i * w + j) * c..(i * w + j + 1) * c];
                match self.kind {
                    SensingKind::Cassi => {
                        let m = self.mask.at(i, j, 0) as f64;
                        if m != 0.0 {
                            for (b, &v) in px.iter().enumerate() {
                                y[i * wm + j + b * self.dispersion_step] += m * v;
                            }
                        }
                    }
                    SensingKind::Cacti => {
                        let acc: f64 = px
                            .iter()
                            .enumerate()
                            .map(|(b, &v)| self.mask.at(i, j, b) as f64 * v)
                            .sum();
                        y[i * wm + j] += acc;
                    }
                }
            }
        }
        y
    }

    /// `Hᵀ · y`, returning a row-major cube.
    pub fn adjoint(&self, y: &[f64], dims: (usize, usize, usize)) -> Vec<f64> {
        let (h, w, c) = dims;
        let (_, wm) = self.measurement_dims(dims);
        let mut x = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let px = &mut x[(i * w + j) * c..(i * w + j + 1) * c];
                for (b, v) in px.iter_mut().enumerate() {
                    *v = match self.kind {
                        SensingKind::Cassi => {
                            self.mask.at(i, j, 0) as f64 * y[i * wm + j + b * self.dispersion_step]
                        }
                        SensingKind::Cacti => self.mask.at(i, j, b) as f64 * y[i * wm + j],
                    };
                }
            }
        }
        x
    }

    /// Diagonal of `H Hᵀ`, one entry per measurement pixel.
    pub fn gram_diagonal(&self, dims: (usize, usize, usize)) -> Vec<f64> {
        let (h, w, c) = dims;
        let (_, wm) = self.measurement_dims(dims);
        let mut phi = vec![0.0; h * wm];
        for i in 0..h {
            for j in 0..w {
                for b in 0..c {
                    match self.kind {
                        SensingKind::Cassi => {
                            let m = self.mask.at(i, j, 0) as f64;
                            phi[i * wm + j + b * self.dispersion_step] += m * m;
                        }
                        SensingKind::Cacti => {
                            let m = self.mask.at(i, j, b) as f64;
                            phi[i * wm + j] += m * m;
                        }
                    }
                }
            }
        }
        phi
    }

    /// Dispatches to [`cassi_forward`] or [`cacti_forward`].
    pub fn forward(&self, cube: &Tensor, rng: &mut Rng) -> Result<Measurement> {
        match self.kind {
            SensingKind::Cassi => cassi_forward(cube, self, rng),
            SensingKind::Cacti => cacti_forward(cube, self, rng),
        }
    }

    fn forward_checked(&self, cube: &Tensor, kind: SensingKind, rng: &mut Rng) -> Result<Measurement> {
        if self.kind != kind {
            return Err(CoreError::SensingMismatch(format!(
                "model is {:?}, operation needs {kind:?}",
                self.kind
            )));
        }
        if cube.ndim() != 3 {
            return Err(CoreError::InvalidDims(cube.dims().to_vec()));
        }
        let dims = cube.cube_dims()?;
        self.check_cube_dims(dims)?;
        let mut y = self.apply(&cube.to_f64(), dims);
        if self.noise_std > 0.0 {
            for v in &mut y {
                *v += self.noise_std * rng.next_gaussian();
            }
        }
        let (h, wm) = self.measurement_dims(dims);
        Ok(Measurement {
            data: Tensor::from_f64(vec![h, wm], &y)?,
            model_id: self.id(),
        })
    }
}

/// Single-disperser CASSI: mask, shift band `c` by `c * step`, accumulate, add sensor noise.
pub fn cassi_forward(cube: &Tensor, model: &SensingModel, rng: &mut Rng) -> Result<Measurement> {
    model.forward_checked(cube, SensingKind::Cassi, rng)
}

/// CACTI: `Σ_b frame_b ⊙ mask_b + g`.
pub fn cacti_forward(video: &Tensor, model: &SensingModel, rng: &mut Rng) -> Result<Measurement> {
    model.forward_checked(video, SensingKind::Cacti, rng)
}

/// Coordinate-list sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` triples, sorted by column.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for &(r, c, v) in &self.entries {
            x[c] += v * y[r];
        }
        x
    }

    pub fn nonzeros_per_column(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for &(_, c, _) in &self.entries {
            counts[c] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            m[r][c] += v;
        }
        m
    }
}

/// Explicit `H` with `vec(forward(x)) = H · vec(x)` for noiseless sensing.
/// Columns for masked-out voxels are left empty.
pub fn build_sensing_matrix(model: &SensingModel, dims: (usize, usize, usize)) -> Result<SparseMatrix> {
    model.check_cube_dims(dims)?;
    let (h, w, c) = dims;
    let cols = h * w * c;
    if cols > MAX_MATRIX_NONZEROS {
        return Err(CoreError::MatrixTooLarge(cols));
    }
    let (_, wm) = model.measurement_dims(dims);
    let mut entries = Vec::with_capacity(cols);
    for i in 0..h {
        for j in 0..w {
            for b in 0..c {
                let col = (i * w + j) * c + b;
                let (row, m) = match model.kind {
                    SensingKind::Cassi => (i * wm + j + b * model.dispersion_step, model.mask.at(i, j, 0)),
                    SensingKind::Cacti => (i * wm + j, model.mask.at(i, j, b)),
                };
                if m != 0.0 {
                    entries.push((row, col, m as f64));
                }
            }
        }
    }
    Ok(SparseMatrix {
        rows: h * wm,
        cols,
        entries,
    })
}

/// Structured-text description of a sensing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub kind: SensingKind,
    #[serde(default = "one")]
    pub dispersion_step: usize,
    #[serde(default)]
    pub noise_std: f64,
    /// ICT mask file; when absent a Bernoulli mask is drawn from `seed`.
    #[serde(default)]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "half")]
    pub mask_p: f64,
    #[serde(default)]
    pub height: usize,
    #[serde(default)]
    pub width: usize,
    /// Frames for CACTI masks; ignored for CASSI.
    #[serde(default = "one")]
    pub slices: usize,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

impl SensingSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))
    }

    /// Builds the model; relative mask paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<SensingModel> {
        let mask = match &self.mask_path {
            Some(p) => Mask::new(read_tensor(base_dir.join(p))?, MaskKind::Graylevel)?,
            None => {
                let slices = match self.kind {
                    SensingKind::Cassi => 1,
                    SensingKind::Cacti => self.slices,
                };
                generate_mask(self.height, self.width, slices, self.mask_p, self.seed, MaskPattern::Bernoulli)?
            }
        };
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(CoreError::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        Ok(match self.kind {
            SensingKind::Cassi => SensingModel::cassi(mask, self.dispersion_step, self.noise_std),
            SensingKind::Cacti => SensingModel::cacti(mask, self.noise_std),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(dims: (usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let n = dims.0 * dims.1 * dims.2;
        Tensor::from_f64(vec![dims.0, dims.1, dims.2], &(0..n).map(|_| rng.next_uniform()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn degenerate_masks() {
        let zeros = generate_mask(4, 4, 1, 0.0, 1, MaskPattern::Bernoulli).unwrap();
        assert!(zeros.pattern().data().iter().all(|&v| v == 0.0));
        let ones = generate_mask(4, 4, 1, 1.0, 1, MaskPattern::Bernoulli).unwrap();
        assert!(ones.pattern().data().iter().all(|&v| v == 1.0));
        assert!(matches!(
            generate_mask(4, 4, 1, 1.5, 1, MaskPattern::Bernoulli),
            Err(CoreError::InvalidProbability(_))
        ));
    }

    #[test]
    fn bernoulli_fill_fraction() {
        // Binomial(4096, 0.5) has std 0.0078 in fraction; 0.05 is > 6 sigma.
        for seed in 0..5 {
            let m = generate_mask(64, 64, 1, 0.5, seed, MaskPattern::Bernoulli).unwrap();
            let frac = m.pattern().data().iter().sum::<f32>() / 4096.0;
            assert!((frac - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn cassi_single_band_identity() {
        let mask = generate_mask(3, 4, 1, 1.0, 0, MaskPattern::AllOnes).unwrap();
        let model = SensingModel::cassi(mask, 0, 0.0);
        let x = cube((3, 4, 1), 5);
        let y = cassi_forward(&x, &model, &mut Rng::new(0)).unwrap();
        assert_eq!(y.data.data(), x.data());
    }

    #[test]
    fn cassi_hand_sum() {
        let mask = Mask::new(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap(), MaskKind::Binary).unwrap();
        let model = SensingModel::cassi(mask, 0, 0.0);
        let y = cassi_forward(&Tensor::filled(&[2, 2, 2], 1.0), &model, &mut Rng::new(0)).unwrap();
        assert_eq!(y.data.dims(), &[2, 2]);
        assert_eq!(y.data.data(), &[2., 0., 0., 2.]);
    }

    #[test]
    fn cassi_width_grows_with_dispersion() {
        let mask = generate_mask(4, 4, 1, 0.5, 2, MaskPattern::Bernoulli).unwrap();
        let model = SensingModel::cassi(mask, 2, 0.0);
        let y = cassi_forward(&cube((4, 4, 3), 1), &model, &mut Rng::new(0)).unwrap();
        assert_eq!(y.data.dims(), &[4, 8]);
    }

    #[test]
    fn cacti_identity_and_partition() {
        let ones = generate_mask(3, 3, 1, 1.0, 0, MaskPattern::AllOnes).unwrap();
        let model = SensingModel::cacti(ones, 0.0);
        let x = cube((3, 3, 1), 8);
        assert_eq!(cacti_forward(&x, &model, &mut Rng::new(0)).unwrap().data.data(), x.data());

        let m0 = generate_mask(4, 4, 1, 0.5, 3, MaskPattern::Bernoulli).unwrap();
        let mut data = Vec::new();
        for &v in m0.pattern().data() {
            data.extend_from_slice(&[v, 1.0 - v]);
        }
        let mask = Mask::new(Tensor::new(vec![4, 4, 2], data).unwrap(), MaskKind::Binary).unwrap();
        let model = SensingModel::cacti(mask, 0.0);
        let y = cacti_forward(&Tensor::filled(&[4, 4, 2], 1.0), &model, &mut Rng::new(0)).unwrap();
        assert!(y.data.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_matrix_for_trivial_cassi() {
        let mask = generate_mask(2, 2, 1, 1.0, 0, MaskPattern::AllOnes).unwrap();
        let model = SensingModel::cassi(mask, 0, 0.0);
        let h = build_sensing_matrix(&model, (2, 2, 1)).unwrap();
        let dense = h.to_dense();
        for (r, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(v, if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn cacti_matrix_by_hand() {
        // masks: frame 0 = [[1,0],[1,1]], frame 1 = [[0,1],[1,0]]
        let data = vec![1., 0., 0., 1., 1., 1., 1., 0.];
        let mask = Mask::new(Tensor::new(vec![2, 2, 2], data).unwrap(), MaskKind::Binary).unwrap();
        let model = SensingModel::cacti(mask, 0.0);
        let h = build_sensing_matrix(&model, (2, 2, 2)).unwrap();
        // columns are voxels (pixel-major, frame-minor)
        let expected = vec![
            vec![1., 0., 0., 0., 0., 0., 0., 0.],
            vec![0., 0., 0., 1., 0., 0., 0., 0.],
            vec![0., 0., 0., 0., 1., 1., 0., 0.],
            vec![0., 0., 0., 0., 0., 0., 1., 0.],
        ];
        assert_eq!(h.to_dense(), expected);
    }

    #[test]
    fn matrix_size_guard() {
        let mask = generate_mask(2048, 2048, 1, 1.0, 0, MaskPattern::AllOnes).unwrap();
        let model = SensingModel::cassi(mask, 1, 0.0);
        assert!(matches!(
            build_sensing_matrix(&model, (2048, 2048, 2)),
            Err(CoreError::MatrixTooLarge(_))
        ));
    }

    #[test]
    fn kind_and_dim_mismatch() {
        let mask = generate_mask(4, 4, 1, 0.5, 0, MaskPattern::Bernoulli).unwrap();
        let model = SensingModel::cassi(mask, 1, 0.0);
        assert!(cacti_forward(&cube((4, 4, 1), 0), &model, &mut Rng::new(0)).is_err());
        assert!(cassi_forward(&cube((4, 5, 2), 0), &model, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn sensor_noise_has_requested_std() {
        let mask = generate_mask(64, 64, 1, 1.0, 0, MaskPattern::AllOnes).unwrap();
        let model = SensingModel::cassi(mask, 0, 0.1);
        let x = Tensor::zeros(&[64, 64, 1]);
        let y = cassi_forward(&x, &model, &mut Rng::new(1)).unwrap();
        let var = y.data.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / 4096.0;
        assert!((var.sqrt() - 0.1).abs() < 0.005);
    }

    #[test]
    fn spec_from_toml() {
        let spec = SensingSpec::from_toml(
            "kind = \"cassi\"\ndispersion_step = 1\nnoise_std = 0.0\nseed = 3\nheight = 8\nwidth = 8\n",
        )
        .unwrap();
        let model = spec.build(Path::new(".")).unwrap();
        assert_eq!(model.mask.slices(), 1);
        assert_eq!(model.measurement_dims((8, 8, 4)), (8, 11));
    }
}
