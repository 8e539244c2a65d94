//! Named parameter storage and the on-disk archive format: one ICT file per
//! tensor plus a `manifest.toml` mapping names to files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use icci_core::ict::{read_tensor, write_tensor};
use icci_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::{ModelError, Result};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Running statistics are stored alongside weights but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, p: Param) {
        self.params.insert(name.into(), p);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Same names and shapes, zero values.
    pub fn zeros_like(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(n, p)| {
                (
                    n.clone(),
                    Param {
                        shape: p.shape.clone(),
                        data: vec![0.0; p.data.len()],
                        trainable: p.trainable,
                    },
                )
            })
            .collect();
        Self { params }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (n, p) in &self.params {
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteParam(n.clone()));
            }
        }
        Ok(())
    }

    /// Writes every tensor to `dir` and a manifest tagged with `fingerprint`.
    pub fn save(&self, dir: &Path, fingerprint: &str, arch: Option<&ArchConfig>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.params.len());
        for (i, (name, p)) in self.params.iter().enumerate() {
            let file = format!("p{i:04}.ict");
            let t = Tensor::new(p.shape.clone(), p.data.clone())?;
            write_tensor(&t, dir.join(&file))?;
            entries.push(ManifestEntry {
                name: name.clone(),
                file,
                trainable: p.trainable,
            });
        }
        let manifest = Manifest {
            fingerprint: fingerprint.to_string(),
            arch: arch.cloned(),
            params: entries,
        };
        let path = dir.join(MANIFEST);
        let text = toml::to_string(&manifest).map_err(|e| ModelError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        fs::write(&path, text).map_err(|e| ModelError::io(&path, e))
    }

    /// Loads an archive written by [`ParamStore::save`], returning the store
    /// and its manifest.
    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
        let manifest = parse_manifest(&text).map_err(|message| ModelError::Manifest {
            path: path.clone(),
            message,
        })?;
        let mut store = Self::new();
        for e in &manifest.params {
            let t = read_tensor(dir.join(&e.file))?;
            store.insert(
                e.name.clone(),
                Param {
                    shape: t.dims().to_vec(),
                    data: t.into_data(),
                    trainable: e.trainable,
                },
            );
        }
        Ok((store, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchConfig>,
    pub params: Vec<ManifestEntry>,
}

/// Parses and sanity-checks manifest text: file names must be plain
/// relative names and parameter names unique.
pub fn parse_manifest(text: &str) -> std::result::Result<Manifest, String> {
    let m: Manifest = toml::from_str(text).map_err(|e| e.to_string())?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &m.params {
        let plain = !e.file.is_empty()
            && !e.file.contains(['/', '\\'])
            && e.file != "."
            && e.file != ".."
            && e.file != MANIFEST;
        if !plain {
            return Err(format!("invalid file name {:?}", e.file));
        }
        if !seen.insert(e.name.as_str()) {
            return Err(format!("duplicate parameter {:?}", e.name));
        }
    }
    Ok(m)
}

/// Parameters bound to the architecture they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub store: ParamStore,
}

impl NetworkParams {
    pub fn fingerprint(&self) -> String {
        self.arch.fingerprint()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.save(dir, &self.fingerprint(), Some(&self.arch))
    }

    /// Loads an archive and checks it against `arch`.
    pub fn load(dir: &Path, arch: &ArchConfig) -> Result<Self> {
        let (store, manifest) = ParamStore::load(dir)?;
        let expected = arch.fingerprint();
        if manifest.fingerprint != expected {
            return Err(ModelError::FingerprintMismatch {
                expected,
                found: manifest.fingerprint,
            });
        }
        store.check_finite()?;
        Ok(Self {
            arch: arch.clone(),
            store,
        })
    }

    /// Loads an archive using the architecture recorded in its manifest.
    pub fn load_embedded(dir: &Path) -> Result<Self> {
        let (_, manifest) = ParamStore::load(dir)?;
        let arch = manifest.arch.ok_or_else(|| ModelError::Manifest {
            path: dir.join(MANIFEST),
            message: "no embedded architecture".into(),
        })?;
        Self::load(dir, &arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_rejects_path_escape() {
        let text = "fingerprint = \"x\"\n[[params]]\nname = \"a\"\nfile = \"../a.ict\"\ntrainable = true\n";
        assert!(parse_manifest(text).is_err());
        let dup = "fingerprint = \"x\"\n[[params]]\nname = \"a\"\nfile = \"a.ict\"\ntrainable = true\n[[params]]\nname = \"a\"\nfile = \"b.ict\"\ntrainable = true\n";
        assert!(parse_manifest(dup).is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.insert(
            "w",
            Param {
                shape: vec![2, 3],
                data: vec![1.5, -2.0, 0.1, 3.0, f32::MIN_POSITIVE, 7.0],
                trainable: true,
            },
        );
        s.insert(
            "bn.mean",
            Param {
                shape: vec![1],
                data: vec![0.25],
                trainable: false,
            },
        );
        s.save(dir.path(), "abc", None).unwrap();
        let (back, m) = ParamStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.fingerprint, "abc");
    }
}
