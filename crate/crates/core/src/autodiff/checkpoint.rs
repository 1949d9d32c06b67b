//! Self-describing weight container: registry key → shape + float payload.
//!
//! Payload floats are written with shortest round-trip formatting and parsed
//! with correctly-rounded parsing, so save → load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub key: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Free-form metadata (model configuration, type set, training step).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let entries = store
            .iter()
            .map(|(_, key, t)| CheckpointEntry {
                key: key.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            meta,
            entries,
        }
    }

    /// Rebuild a store with entries in file order.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for e in &self.entries {
            let t = Tensor::new(e.shape.clone(), e.values.clone()).map_err(|_| Error::Parse {
                context: format!("checkpoint entry {}", e.key),
                detail: format!(
                    "shape {:?} does not hold {} values",
                    e.shape,
                    e.values.len()
                ),
            })?;
            store.insert(e.key.clone(), t)?;
        }
        Ok(store)
    }

    /// Overwrite values in `store` by key; every key in `store` must be present.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let loaded = self.to_store()?;
        for id in store.ids().collect::<Vec<_>>() {
            let key = store.name(id).to_string();
            let src = loaded
                .id_of(&key)
                .ok_or_else(|| Error::UnknownId(format!("checkpoint lacks parameter {key}")))?;
            let t = loaded.get(src);
            if t.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    "checkpoint load",
                    store.get(id).shape(),
                    t.shape(),
                ));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Contract(format!("checkpoint encode: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("checkpoint line {} column {}", e.line(), e.column()),
            detail: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse {
                context: "checkpoint header".into(),
                detail: format!(
                    "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                    ck.format_version
                ),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(values in prop::collection::vec(-1e12f64..1e12, 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("EE/Home-PG—Away-C/w_i", Tensor::new(vec![1, n], values).unwrap()).unwrap();
            let ck = Checkpoint::from_store(&store, serde_json::json!({"step": 3}));
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let restored = back.to_store().unwrap();
            let a = store.iter().next().unwrap().2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            let b = restored.iter().next().unwrap().2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.meta, serde_json::json!({"step": 3}));
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let text = r#"{"format_version": 99, "entries": []}"#;
        assert!(matches!(
            Checkpoint::from_json(text),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn load_into_requires_every_key() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::zeros(&[2])).unwrap();
        store.insert("b", Tensor::zeros(&[2])).unwrap();
        let mut partial = ParamStore::new();
        partial.insert("a", Tensor::filled(&[2], 1.0)).unwrap();
        let ck = Checkpoint::from_store(&partial, serde_json::Value::Null);
        assert!(matches!(ck.load_into(&mut store), Err(Error::UnknownId(_))));
    }
}
