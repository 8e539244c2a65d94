//! Loading directories of ICT cubes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::ict::read_tensor;
use crate::tensor::Tensor;

/// Expected axis order of the cubes in a dataset directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `height × width × bands`
    Spectral,
    /// `height × width × frames`
    Video,
}

/// Loads every `*.ict` file in `dir` (sorted by file name), requiring
/// identical rank-3 dims and clipping values to `[0, 1]`.
pub fn load_dataset(dir: impl AsRef<Path>, _layout: Layout) -> Result<Vec<Tensor>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CoreError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ict"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::EmptyDataset(dir.to_path_buf()));
    }
    let mut cubes: Vec<Tensor> = Vec::with_capacity(paths.len());
    for path in paths {
        let mut t = read_tensor(&path)?;
        if t.ndim() != 3 {
            return Err(CoreError::InvalidDims(t.dims().to_vec()));
        }
        if let Some(first) = cubes.first() {
            if first.dims() != t.dims() {
                return Err(CoreError::HeterogeneousDims {
                    first: first.dims().to_vec(),
                    other: t.dims().to_vec(),
                    path,
                });
            }
        }
        t.clamp(0.0, 1.0);
        cubes.push(t);
    }
    Ok(cubes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ict::write_tensor;

    #[test]
    fn loads_sorted_and_clipped() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let t = Tensor::filled(&[2, 2, 2], i as f32 - 0.5);
            write_tensor(&t, dir.path().join(format!("{i}.ict"))).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let cubes = load_dataset(dir.path(), Layout::Spectral).unwrap();
        assert_eq!(cubes.len(), 3);
        assert_eq!(cubes[0].data()[0], 0.0);
        assert_eq!(cubes[1].data()[0], 0.5);
        assert_eq!(cubes[2].data()[0], 1.0);
    }

    #[test]
    fn heterogeneous_dims_fail() {
        let dir = tempfile::tempdir().unwrap();
        write_tensor(&Tensor::zeros(&[2, 2, 3]), dir.path().join("a.ict")).unwrap();
        write_tensor(&Tensor::zeros(&[2, 2, 4]), dir.path().join("b.ict")).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Spectral),
            Err(CoreError::HeterogeneousDims { .. })
        ));
    }

    #[test]
    fn empty_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path(), Layout::Video),
            Err(CoreError::EmptyDataset(_))
        ));
    }
}
