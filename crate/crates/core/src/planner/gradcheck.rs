use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_on_tape, ForwardOptions, NeighborOrder, PlannerInput};
use super::params::{Aggregator, ModelDims, NeuralPlannerParams};
use crate::autodiff::{Fault, Tape};
use crate::graph::{GtChannelMode, TopoGraph, N_MAX};
use crate::symbolic::gt_labels;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub configurations: usize,
    pub n_nodes: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
    pub fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            configurations: 20,
            n_nodes: 6,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
            seed: 0,
            fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub configuration: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub results: Vec<GradcheckResult>,
    pub passed: bool,
}

fn small_dims(aggregator: Aggregator) -> ModelDims {
    ModelDims {
        feature_dim: 3,
        msg: 3,
        hidden: 3,
        r_dim: 3,
        mlp_hidden: 4,
        gru_depth: 2,
        aggregator,
    }
}

/// Random connected-ish graph on `n` nodes with mixed channels.
fn random_instance(n: usize, rng: &mut ChaCha8Rng) -> Result<TopoGraph> {
    let locs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
    let mut probs = vec![vec![0.0; n]; n];
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p: f64 = rng.random();
            probs[i][j] = p;
            probs[j][i] = p;
            let a = p > 0.4 || j == i + 1;
            adj[i][j] = a;
            adj[j][i] = a;
        }
    }
    let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    TopoGraph::from_locations(&locs, &probs, &feats, Some(&adj))
}

fn backprop(
    params: &NeuralPlannerParams,
    g: &TopoGraph,
    target: usize,
    onehot: &[f64],
    rows: &[usize],
    opts: &ForwardOptions,
    fault: Fault,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::with_fault(fault);
    let input = PlannerInput {
        graph: g,
        target,
        mode: GtChannelMode::Both,
    };
    let pass = forward_on_tape::<ChaCha8Rng>(&mut tape, params, &[input], opts, None)?;
    let picked = tape.gather_rows(pass.logits, rows)?;
    let loss = tape.cross_entropy(picked, onehot)?;
    let grads = tape.backward(loss)?;
    Ok(pass.params.iter().map(|&v| grads.of(v)).collect())
}

/// Compares backpropagated planner gradients with central differences on
/// every parameter coordinate of a small model.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let opts = ForwardOptions {
        gnn_steps: 2,
        use_features: true,
        dist_scale: 0.5,
        neighbor_order: NeighborOrder::Ascending,
    };
    let fault = if config.fault { Fault::SigmoidBackward } else { Fault::None };
    let mut results = Vec::new();
    for c in 0..config.configurations {
        let aggregator = if c % 4 == 3 { Aggregator::Mean } else { Aggregator::Gru };
        let mut params = NeuralPlannerParams::init(small_dims(aggregator), rng.random())?;
        // Push every tensor, biases included, away from its initial scale.
        for t in &mut params.tensors {
            t.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
        }
        let g = random_instance(config.n_nodes, &mut rng)?;
        let target = rng.random_range(0..config.n_nodes);
        let labels = gt_labels(&g, target)?;
        let rows: Vec<usize> = (0..config.n_nodes).filter(|&i| labels[i] >= 0).collect();
        let mut onehot = vec![0.0; rows.len() * N_MAX];
        for (r, &i) in rows.iter().enumerate() {
            onehot[r * N_MAX + labels[i] as usize] = 1.0;
        }
        let grads = backprop(&params, &g, target, &onehot, &rows, &opts, fault)?;

        let mut worst = (0.0f64, String::new(), 0usize);
        let mut checked = 0;
        for p in 0..params.tensors.len() {
            for k in 0..params.tensors[p].len() {
                let orig = params.tensors[p].values()[k];
                params.tensors[p].values_mut()[k] = orig + config.step;
                let plus = loss_value(&params, &g, target, &onehot, &rows, &opts)?;
                params.tensors[p].values_mut()[k] = orig - config.step;
                let minus = loss_value(&params, &g, target, &onehot, &rows, &opts)?;
                params.tensors[p].values_mut()[k] = orig;
                let fd = (plus - minus) / (2.0 * config.step);
                let bp = grads[p][k];
                let err = (fd - bp).abs() / fd.abs().max(bp.abs()).max(config.floor);
                checked += 1;
                if err > worst.0 || worst.1.is_empty() {
                    worst = (err, params.names()[p].clone(), k);
                }
            }
        }
        results.push(GradcheckResult {
            configuration: c,
            max_rel_error: worst.0,
            worst_param: worst.1,
            worst_index: worst.2,
            checked,
            passed: worst.0 < config.tolerance,
        });
    }
    let passed = results.iter().all(|r| r.passed);
    Ok(GradcheckReport { results, passed })
}

fn loss_value(
    params: &NeuralPlannerParams,
    g: &TopoGraph,
    target: usize,
    onehot: &[f64],
    rows: &[usize],
    opts: &ForwardOptions,
) -> Result<f64> {
    let mut tape = Tape::new();
    let input = PlannerInput {
        graph: g,
        target,
        mode: GtChannelMode::Both,
    };
    let pass = forward_on_tape::<ChaCha8Rng>(&mut tape, params, &[input], opts, None)?;
    let picked = tape.gather_rows(pass.logits, rows)?;
    let loss = tape.cross_entropy(picked, onehot)?;
    Ok(tape.scalar(loss))
}
