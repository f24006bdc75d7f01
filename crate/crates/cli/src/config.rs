use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topoplan::hierarchical::LocalPolicyConfig;
use topoplan::planner::TrainConfig;
use topoplan::worldgen::{GenParams, NoiseModel};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_graphs: usize,
    /// Caps on graphs read per split; 0 keeps all.
    pub max_train_graphs: usize,
    pub max_val_graphs: usize,
    pub max_test_graphs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_graphs: 1100,
            max_train_graphs: 0,
            max_val_graphs: 0,
            max_test_graphs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            taus: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            lambdas: vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchicalConfig {
    pub episodes: usize,
    pub budget: usize,
    pub local: LocalPolicyConfig,
    /// Extra `m` values run for the deterministic neural planner.
    pub m_sweep: Vec<usize>,
    /// Meters of grid distance between a start cell and the goal region.
    pub min_start: f64,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            budget: topoplan::hierarchical::DEFAULT_BUDGET,
            local: LocalPolicyConfig::default(),
            m_sweep: vec![5, 10, 20],
            min_start: 1.0,
        }
    }
}

/// Everything a command needs, read from a TOML file and overridden by
/// flags. `seed` drives every random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub gen: GenParams,
    pub noise: NoiseModel,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub hierarchical: HierarchicalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("config: {e}")).into())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Copies `seed` into every component that carries its own.
    pub fn resolved(mut self) -> anyhow::Result<Self> {
        self.gen.seed = self.seed;
        self.train.seed = self.seed;
        self.gen.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        self.noise.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        self.hierarchical
            .local
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(self)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(RunConfig::from_toml("seed = 3\n").is_ok());
        assert!(RunConfig::from_toml("sede = 3\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.01\nlearning_rate = 1\n").is_err());
        assert!(RunConfig::from_toml("[gen.grid]\nwidth = 60\nwide = 1\n").is_err());
        assert!(RunConfig::from_toml("[hierarchical.local]\nm = 5\n").is_ok());
    }

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.weight_decay, 1e-4);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.gnn_steps, 6);
        assert_eq!(c.train.clip_norm, 2.0);
        assert_eq!(c.eval.taus.len(), 11);
        assert_eq!(c.eval.taus[10], 1.0);
        assert_eq!(c.hierarchical.local.m, 10);
    }

    #[test]
    fn seed_reaches_every_component_and_the_hash() {
        let a = RunConfig { seed: 5, ..RunConfig::default() }.resolved().unwrap();
        assert_eq!((a.gen.seed, a.train.seed), (5, 5));
        let b = RunConfig { seed: 6, ..RunConfig::default() }.resolved().unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().resolved().unwrap().hash());
    }
}
