//! Named tensor container and its on-disk format: `manifest.json` listing
//! `{name, shape, dtype, byte_offset}` in order, plus `weights.bin` holding
//! the little-endian values back to back.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::tensor::Scalar;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    /// Values converted to `T` (a copy even when no conversion is needed).
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::from_f64(f64::from(x))).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    seed: Option<u64>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    pub tensors: IndexMap<String, Tensor>,
    pub config_hash: u64,
    pub seed: Option<u64>,
}

impl WeightStore {
    pub fn new(config_hash: u64, seed: Option<u64>) -> Self {
        Self { tensors: IndexMap::new(), config_hash, seed }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Invariant(format!("duplicate tensor `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::shape(format!("missing tensor `{name}`")))
    }

    /// Values of `name` as `T`, checking the shape.
    pub fn values<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::shape(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data.to_vec())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Every tensor the config declares must be present with its exact shape,
    /// and nothing else may be.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = cfg.tensor_specs();
        let mut problems = Vec::new();
        for spec in &specs {
            match self.tensors.get(&spec.name) {
                None => problems.push(format!("missing `{}`", spec.name)),
                Some(t) if t.shape != spec.shape => {
                    problems.push(format!("`{}` has shape {:?}, expected {:?}", spec.name, t.shape, spec.shape))
                }
                Some(_) => {}
            }
        }
        for name in self.tensors.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                problems.push(format!("unexpected `{name}`"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            let shown: Vec<_> = problems.iter().take(5).cloned().collect();
            let more = problems.len().saturating_sub(shown.len());
            let suffix = if more > 0 { format!(" (+{more} more)") } else { String::new() };
            Err(Error::shape(format!("weights do not match config: {}{suffix}", shown.join("; "))))
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bin = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype(),
                byte_offset: bin.len(),
            });
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| bin.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| bin.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let manifest =
            Manifest { config_hash: format!("{:016x}", self.config_hash), seed: self.seed, tensors: entries };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::write(dir.join(WEIGHTS_FILE), bin)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        let bin = std::fs::read(dir.join(WEIGHTS_FILE))?;
        let config_hash = u64::from_str_radix(&manifest.config_hash, 16)
            .map_err(|e| Error::Format(format!("bad config hash `{}`: {e}", manifest.config_hash)))?;
        let mut store = Self::new(config_hash, manifest.seed);
        let mut expected_offset = 0;
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let bytes = n * e.dtype.size();
            if e.byte_offset != expected_offset || e.byte_offset + bytes > bin.len() {
                return Err(Error::Format(format!(
                    "tensor `{}` at byte {} ({bytes} bytes) does not fit the weight file layout",
                    e.name, e.byte_offset
                )));
            }
            let raw = &bin[e.byte_offset..e.byte_offset + bytes];
            let data = match e.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                ),
            };
            store.insert(e.name, Tensor::new(e.shape, data)?)?;
            expected_offset += bytes;
        }
        if expected_offset != bin.len() {
            return Err(Error::Format(format!("{} trailing bytes in weight file", bin.len() - expected_offset)));
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;

    #[test]
    fn save_load_is_bit_exact() {
        let cfg = ModelConfig::default();
        let mut store = init_weights(&cfg, 11);
        store
            .insert("extra.f64", Tensor::new(vec![3], TensorData::F64(vec![0.1, -0.0, f64::MIN_POSITIVE])).unwrap())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let back = WeightStore::load(dir.path()).unwrap();
        assert_eq!(back.config_hash, store.config_hash);
        assert_eq!(back.seed, Some(11));
        assert_eq!(back.tensors.len(), store.tensors.len());
        for ((na, a), (nb, b)) in store.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(a.shape, b.shape);
            match (&a.data, &b.data) {
                (TensorData::F32(x), TensorData::F32(y)) => {
                    assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
                }
                (TensorData::F64(x), TensorData::F64(y)) => {
                    assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
                }
                _ => panic!("dtype changed for {na}"),
            }
        }
    }

    #[test]
    fn check_against_reports_shape_mismatch() {
        let cfg = ModelConfig::default();
        let store = init_weights(&cfg, 1);
        store.check_against(&cfg).unwrap();
        let other = ModelConfig::preset("uniform-c64").unwrap();
        assert!(matches!(store.check_against(&other), Err(Error::Shape(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let cfg = ModelConfig::preset("uniform-c16").unwrap();
        let store = init_weights(&cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(WeightStore::load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], TensorData::F32(vec![0.0; 3])).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = WeightStore::new(0, None);
        let t = Tensor::new(vec![1], TensorData::F32(vec![1.0])).unwrap();
        s.insert("a", t.clone()).unwrap();
        assert!(matches!(s.insert("a", t), Err(Error::Invariant(_))));
    }
}
