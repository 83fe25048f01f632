use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gsd_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the default projection initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named parameter tensors with a trainable flag each.
///
/// `id` distinguishes stores that share one tape (for instance a frozen
/// decoder, a frozen denoiser and its adapters).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub id: String,
    params: BTreeMap<String, Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            params: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidParameter(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, Param { value, trainable });
        Ok(())
    }

    /// Truncated normal (resampled beyond two standard deviations).
    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<()> {
        let data = (0..rows * cols)
            .map(|_| loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break T::lit(z * std);
                }
            })
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data)?, true)
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<()> {
        self.insert(name, Tensor::filled(rows, cols, T::lit(v)), true)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.add_const(name, rows, cols, 0.0)
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {name} in {}", self.id)))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id.clone();
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {name} in {id}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let id = self.id.clone();
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {name} in {id}")))
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.trainable = false);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            id: self.id.clone(),
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
            rng: self.rng.clone(),
        }
    }

    /// SHA-256 over names, shapes and value bits of the selected tensors.
    pub fn checksum(&self, frozen_only: bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if frozen_only && p.trainable {
                continue;
            }
            h.update(name.as_bytes());
            h.update((p.value.rows as u64).to_le_bytes());
            h.update((p.value.cols as u64).to_le_bytes());
            for v in &p.value.data {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write `<stem>.bin` (little-endian f32 values) and `<stem>.json` (index).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut bin = Vec::with_capacity(self.param_count() * 4);
        let mut tensors = BTreeMap::new();
        let mut offset = 0;
        for (name, p) in &self.params {
            for v in &p.value.data {
                bin.extend_from_slice(&v.as_f32().to_le_bytes());
            }
            tensors.insert(
                name.clone(),
                IndexEntry {
                    shape: [p.value.rows, p.value.cols],
                    offset,
                    trainable: p.trainable,
                },
            );
            offset += p.value.len();
        }
        let index = CheckpointIndex {
            id: self.id.clone(),
            tensors,
        };
        let (bin_path, json_path) = checkpoint_paths(stem);
        fs::write(&bin_path, bin).map_err(|e| Error::io(format!("writing {}", bin_path.display()), e))?;
        gsd_core::dataset::write_json(&json_path, &index)
    }

    /// Load a checkpoint written by [`ParamStore::save`].
    pub fn load(stem: &Path, seed: u64) -> Result<Self> {
        let (bin_path, json_path) = checkpoint_paths(stem);
        let index: CheckpointIndex = gsd_core::dataset::read_json(&json_path)?;
        let bin = fs::read(&bin_path).map_err(|e| Error::io(format!("reading {}", bin_path.display()), e))?;
        if bin.len() % 4 != 0 {
            return Err(Error::format(&bin_path, "length is not a multiple of 4"));
        }
        let vals: Vec<f32> = bin
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut store = Self::new(index.id, seed);
        for (name, e) in index.tensors {
            let n = e.shape[0] * e.shape[1];
            let slice = vals
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::format(&bin_path, format!("tensor {name} out of range")))?;
            let t = Tensor::from_vec(e.shape[0], e.shape[1], slice.iter().map(|&v| T::lit(v as f64)).collect())?;
            store.insert(name, t, e.trainable)?;
        }
        Ok(store)
    }

    /// Check that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        for (name, p) in &self.params {
            let q = other.get(name)?;
            if p.value.shape() != q.value.shape() {
                return Err(Error::Shape(format!(
                    "{name}: {:?} vs {:?}",
                    p.value.shape(),
                    q.value.shape()
                )));
            }
        }
        if other.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} has {} tensors, expected {}",
                other.id,
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    shape: [usize; 2],
    offset: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    id: String,
    tensors: BTreeMap<String, IndexEntry>,
}

pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}
