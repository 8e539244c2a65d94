//! Dense row-major binary32 tensor.

use crate::error::{CoreError, Result};

/// Row-major `f32` tensor with positive dimensions and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(CoreError::InvalidDims(dims));
        }
        let expected = checked_volume(&dims).ok_or_else(|| CoreError::InvalidDims(dims.clone()))?;
        if expected != data.len() {
            return Err(CoreError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&d| d > 0), "invalid dims {dims:?}");
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor from `f64` values, rounding to binary32.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Interprets a rank-3 tensor as `(height, width, depth)`.
    pub fn cube_dims(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            &[h, w] => Ok((h, w, 1)),
            other => Err(CoreError::InvalidDims(other.to_vec())),
        }
    }

    /// Reinterprets the payload under new dimensions of equal volume.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        let n = checked_volume(&dims).ok_or_else(|| CoreError::InvalidDims(dims.clone()))?;
        if n != self.data.len() || dims.contains(&0) {
            return Err(CoreError::LengthMismatch {
                expected: self.data.len(),
                actual: n,
            });
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn clamp(&mut self, lo: f32, hi: f32) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Extracts slice `k` along the last axis of a rank-3 tensor as an `h × w` tensor.
    pub fn slice_last(&self, k: usize) -> Result<Tensor> {
        let (h, w, c) = self.cube_dims()?;
        if k >= c {
            return Err(CoreError::InvalidDims(vec![h, w, c, k]));
        }
        let data = (0..h * w).map(|p| self.data[p * c + k]).collect();
        Tensor::new(vec![h, w], data)
    }

    pub(crate) fn check_same_dims(&self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(CoreError::DimMismatch {
                expected: self.dims.clone(),
                actual: other.dims.clone(),
            });
        }
        Ok(())
    }
}

pub(crate) fn checked_volume(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}
