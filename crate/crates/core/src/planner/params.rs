use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, Tensor};
use crate::graph::{NodeEmbedding, N_MAX};
use crate::{Error, Result};

/// How a node folds its incoming messages into a new state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Messages fed one at a time through a stacked GRU.
    Gru,
    /// Order-invariant mean of messages, no recurrence.
    Mean,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(Self::Gru),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown aggregator {other:?}"))),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gru => "gru",
            Self::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub msg: usize,
    pub hidden: usize,
    pub r_dim: usize,
    pub mlp_hidden: usize,
    pub gru_depth: usize,
    pub aggregator: Aggregator,
}

impl ModelDims {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            msg: 64,
            hidden: 64,
            r_dim: 64,
            mlp_hidden: 64,
            gru_depth: 2,
            aggregator: Aggregator::Gru,
        }
    }

    /// Width of the fixed part of a node vector.
    pub fn embed_in(&self) -> usize {
        NodeEmbedding::len(self.feature_dim)
    }

    /// Width of `[x_i, r_i]`.
    pub fn node_dim(&self) -> usize {
        self.embed_in() + self.r_dim
    }

    /// Width of the MLP input.
    pub fn mlp_in(&self) -> usize {
        match self.aggregator {
            Aggregator::Gru => self.hidden,
            Aggregator::Mean => self.msg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.msg, self.hidden, self.r_dim, self.mlp_hidden];
        if positive.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.aggregator == Aggregator::Gru && self.gru_depth == 0 {
            return Err(Error::Config("gru_depth must be at least 1".into()));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<(String, usize, usize)> {
        let d = self.node_dim();
        let h = self.hidden;
        let mut v = vec![
            ("w1".to_string(), 2 * d, self.msg),
            ("b1".to_string(), 1, self.msg),
            ("w2".to_string(), 2 * d, self.msg),
            ("b2".to_string(), 1, self.msg),
        ];
        if self.aggregator == Aggregator::Gru {
            for l in 0..self.gru_depth {
                let input = if l == 0 { self.msg } else { h };
                v.push((format!("gru{l}.wx"), input, 3 * h));
                v.push((format!("gru{l}.wh"), h, 3 * h));
                v.push((format!("gru{l}.bx"), 1, 3 * h));
                v.push((format!("gru{l}.bh"), 1, 3 * h));
            }
        }
        v.push(("mlp.wa".to_string(), self.mlp_in(), self.mlp_hidden));
        v.push(("mlp.ba".to_string(), 1, self.mlp_hidden));
        v.push(("mlp.wb".to_string(), self.mlp_hidden, self.r_dim));
        v.push(("mlp.bb".to_string(), 1, self.r_dim));
        v.push(("readout".to_string(), self.r_dim, N_MAX));
        v
    }
}

/// Every learnable tensor of the planner, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPlannerParams {
    pub dims: ModelDims,
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Positions of the named tensors inside [`NeuralPlannerParams::tensors`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamIndex {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    /// First GRU tensor; layer `l` occupies `gru + 4l .. gru + 4l + 4`.
    pub gru: usize,
    pub mlp: usize,
    pub readout: usize,
}

impl NeuralPlannerParams {
    /// Uniform fan-in initialisation; GRU tensors use `1/sqrt(hidden)`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols) in dims.layout() {
            let bound = if name.starts_with("gru") {
                1.0 / (dims.hidden as f64).sqrt()
            } else if name.starts_with('b') || name.contains(".b") {
                0.0
            } else if name.starts_with("mlp.w") {
                (6.0 / rows as f64).sqrt()
            } else {
                1.0 / (rows as f64).sqrt()
            };
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
                .collect();
            tensors.push(Tensor::from_rows(rows, cols, values)?.with_grad());
            names.push(name);
        }
        Ok(Self { dims, names, tensors })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        let mut p = Self::init(dims, 0)?;
        for t in &mut p.tensors {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(p)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn index(&self) -> ParamIndex {
        let gru = 4;
        let n_gru = if self.dims.aggregator == Aggregator::Gru { 4 * self.dims.gru_depth } else { 0 };
        ParamIndex {
            w1: 0,
            b1: 1,
            w2: 2,
            b2: 3,
            gru,
            mlp: gru + n_gru,
            readout: gru + n_gru + 4,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn to_checkpoint(&self, rng_seed: u64, epoch: usize) -> Checkpoint {
        let d = &self.dims;
        let dims = BTreeMap::from([
            ("feature_dim".to_string(), d.feature_dim),
            ("msg".to_string(), d.msg),
            ("hidden".to_string(), d.hidden),
            ("r_dim".to_string(), d.r_dim),
            ("mlp_hidden".to_string(), d.mlp_hidden),
            ("gru_depth".to_string(), d.gru_depth),
            ("n_actions".to_string(), N_MAX),
            ("aggregator_mean".to_string(), usize::from(d.aggregator == Aggregator::Mean)),
        ]);
        let named: Vec<(String, &Tensor)> = self.names.iter().cloned().zip(self.tensors.iter()).collect();
        Checkpoint::new(dims, &named, rng_seed, epoch)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.dims
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing dim {k}")))
        };
        if get("n_actions")? != N_MAX {
            return Err(Error::Parse("checkpoint was written for a different node capacity".into()));
        }
        let dims = ModelDims {
            feature_dim: get("feature_dim")?,
            msg: get("msg")?,
            hidden: get("hidden")?,
            r_dim: get("r_dim")?,
            mlp_hidden: get("mlp_hidden")?,
            gru_depth: get("gru_depth")?,
            aggregator: if get("aggregator_mean")? == 1 { Aggregator::Mean } else { Aggregator::Gru },
        };
        dims.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols) in dims.layout() {
            let t = ck.tensor(&name)?;
            if t.dims() != (rows, cols) {
                return Err(Error::Parse(format!("tensor {name} has shape {:?}, expected ({rows}, {cols})", t.shape())));
            }
            if !t.all_finite() {
                return Err(Error::Parse(format!("tensor {name} has non-finite values")));
            }
            tensors.push(t.with_grad());
            names.push(name);
        }
        Ok(Self { dims, names, tensors })
    }
}
