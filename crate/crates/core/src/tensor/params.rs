use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Version tag written into every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "S2DM-CKPT-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Frozen parameters enter tapes as constants and
/// are skipped by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    frozen: Vec<bool>,
    index: HashMap<String, ParamId>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    params: BTreeMap<String, StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.frozen.push(false);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    /// Hash over the listed parameters' names and exact bit patterns.
    pub fn hash_of(&self, ids: &[ParamId]) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for &id in ids {
            h.write(self.names[id.0].as_bytes());
            self.values[id.0].hash_into(&mut h);
        }
        h.finish()
    }

    pub fn num_scalars(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.values[id.0].numel()).sum()
    }

    /// Writes the listed parameters (all when `ids` is `None`).
    pub fn save_checkpoint(
        &self,
        path: &Path,
        ids: Option<&[ParamId]>,
        meta: &BTreeMap<String, String>,
    ) -> Result<()> {
        let all: Vec<ParamId> = self.ids().collect();
        let ids = ids.unwrap_or(&all);
        let params = ids
            .iter()
            .map(|&id| {
                let t = &self.values[id.0];
                (
                    self.names[id.0].clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_MAGIC.to_string(),
            meta: meta.clone(),
            params,
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Overwrites parameters with the values found in a checkpoint. Every
    /// stored name must exist here with a matching shape; returns the ids
    /// that were loaded and the checkpoint's metadata.
    pub fn load_checkpoint(
        &mut self,
        path: &Path,
    ) -> Result<(Vec<ParamId>, BTreeMap<String, String>)> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: expected format {CHECKPOINT_MAGIC}, found {}",
                path.display(),
                file.format
            )));
        }
        let mut loaded = Vec::with_capacity(file.params.len());
        for (name, stored) in file.params {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let value = Tensor::new(stored.shape, stored.values)?;
            if value.shape() != self.values[id.0].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?} does not match {:?}",
                    value.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = value;
            loaded.push(id);
        }
        Ok((loaded, file.meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut store = ParamStore::new();
        let w = store
            .add(
                "w",
                Tensor::new(vec![2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 7.5]).unwrap(),
            )
            .unwrap();
        let b = store
            .add("b", Tensor::vector(vec![std::f64::consts::PI]))
            .unwrap();
        let before = store.hash_of(&[w, b]);
        let mut meta = BTreeMap::new();
        meta.insert("stage".into(), "1".into());
        store.save_checkpoint(&path, None, &meta).unwrap();
        store.get_mut(w).data_mut()[0] = 99.0;
        let (loaded, meta_back) = store.load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(meta_back, meta);
        assert_eq!(store.hash_of(&[w, b]), before);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(CHECKPOINT_MAGIC));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format":"S2DM-CKPT-v0","params":{}}"#).unwrap();
        let mut store = ParamStore::new();
        let err = store.load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(1.0)).unwrap();
        assert!(store.add("a", Tensor::scalar(2.0)).is_err());
    }
}
