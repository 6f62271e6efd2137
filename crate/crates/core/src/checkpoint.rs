//! `nta-v1` named-tensor archives.
//!
//! The file is a single canonical JSON object: keys sorted, no insignificant
//! whitespace, floats in shortest round-trip form. Loading and re-saving a
//! file therefore reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "nta-v1";

pub type NamedTensors = BTreeMap<String, Tensor>;

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn fingerprint<T: Serialize>(config: &T) -> String {
    let v = serde_json::to_value(config).expect("config serializes");
    let bytes = serde_json::to_vec(&v).expect("value serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub seed: u64,
    pub tensors: NamedTensors,
}

impl Checkpoint {
    pub fn new(fingerprint: impl Into<String>, seed: u64) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            seed,
            tensors: NamedTensors::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    /// Inserts every tensor of `named` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, named: NamedTensors) {
        for (k, v) in named {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// All tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn prefixed(&self, prefix: &str) -> NamedTensors {
        self.tensors
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k[prefix.len()..].to_string(), v.clone()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut tensors = Map::new();
        for (name, t) in &self.tensors {
            if !t.all_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite values")));
            }
            let mut entry = Map::new();
            entry.insert("shape".into(), Value::from(t.shape().to_vec()));
            entry.insert("values".into(), Value::from(t.data().to_vec()));
            tensors.insert(name.clone(), Value::Object(entry));
        }
        let mut root = Map::new();
        root.insert("fingerprint".into(), Value::from(self.fingerprint.clone()));
        root.insert("format".into(), Value::from(FORMAT));
        root.insert("seed".into(), Value::from(self.seed));
        root.insert("tensors".into(), Value::Object(tensors));
        Ok(serde_json::to_string(&Value::Object(root))?)
    }

    /// Parses an archive. When `expected` is given, the stored fingerprint must
    /// match unless `force` is set.
    pub fn from_json(s: &str, expected: Option<&str>, force: bool) -> Result<Self> {
        let root: Value = serde_json::from_str(s)?;
        let obj = root
            .as_object()
            .ok_or_else(|| Error::Checkpoint("top level is not an object".into()))?;
        let field = |k: &str| {
            obj.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing field `{k}`")))
        };
        let format = field("format")?.as_str().unwrap_or_default();
        if format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{format}`")));
        }
        let fp = field("fingerprint")?
            .as_str()
            .ok_or_else(|| Error::Checkpoint("fingerprint is not a string".into()))?
            .to_string();
        if let Some(exp) = expected {
            if exp != fp && !force {
                return Err(Error::Fingerprint {
                    expected: exp.to_string(),
                    found: fp,
                });
            }
        }
        let seed = field("seed")?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("seed is not an unsigned integer".into()))?;
        let mut tensors = NamedTensors::new();
        let entries = field("tensors")?
            .as_object()
            .ok_or_else(|| Error::Checkpoint("tensors is not an object".into()))?;
        for (name, e) in entries {
            let bad = |what: &str| Error::Checkpoint(format!("tensor `{name}`: {what}"));
            let shape: Vec<usize> = e
                .get("shape")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing shape"))?
                .iter()
                .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| bad("bad extent")))
                .collect::<Result<_>>()?;
            let values: Vec<f64> = e
                .get("values")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing values"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad("non-numeric value")))
                .collect::<Result<_>>()?;
            let t = Tensor::new(&shape, values).map_err(|e| bad(&e.to_string()))?;
            tensors.insert(name.clone(), t);
        }
        Ok(Self {
            fingerprint: fp,
            seed,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&str>, force: bool) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s, expected, force)
    }
}

/// Reads a tensor and checks its shape.
pub(crate) fn take_shaped(named: &NamedTensors, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = named
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if t.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}
