//! Structured-text checkpoint of named parameter arrays.
//!
//! Floats are written in shortest round-trip form, so a load reproduces
//! every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: BTreeMap<String, usize>,
    pub arrays: Vec<NamedArray>,
    pub rng_seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(
        dims: BTreeMap<String, usize>,
        named: &[(String, &Tensor)],
        rng_seed: u64,
        epoch: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            dims,
            arrays: named
                .iter()
                .map(|(name, t)| NamedArray {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect(),
            rng_seed,
            epoch,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint is always serializable")
    }

    /// Parses and validates a checkpoint document.
    pub fn parse(text: &str) -> Result<Self, AutodiffError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &ck.arrays {
            if !seen.insert(a.name.as_str()) {
                return Err(AutodiffError::Checkpoint(format!("duplicate array {}", a.name)));
            }
            let expected = a
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| AutodiffError::Checkpoint(format!("shape overflow in {}", a.name)))?;
            if a.shape.is_empty() || a.shape.len() > 2 || expected != a.values.len() {
                return Err(AutodiffError::Checkpoint(format!(
                    "array {} has shape {:?} but {} values",
                    a.name,
                    a.shape,
                    a.values.len()
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        crate::io_util::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor, AutodiffError> {
        let a = self
            .array(name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("missing array {name}")))?;
        Tensor::new(a.shape.clone(), a.values.clone())
    }
}
