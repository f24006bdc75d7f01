use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_on_tape, next_hop_table, ForwardOptions, NeighborOrder, PlannerInput};
use super::params::{Aggregator, ModelDims, NeuralPlannerParams};
use crate::autodiff::{step_decay_lr, AdamState, Tape};
use crate::graph::{GtChannelMode, TopoGraph, N_MAX};
use crate::symbolic::{accuracy_metric, evaluate_next_hop_planner, gt_labels, hspl_of_pairs, PairOutcome};
use crate::{Error, Result};

/// Which connectivity channel training inputs expose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSchedule {
    /// Mix ground-truth and probability channels, tapering to probabilities.
    ModDrop,
    ProbsOnly,
    GtOnly,
}

impl ChannelSchedule {
    /// Channel used when scoring a model trained with this schedule.
    pub fn eval_mode(self) -> GtChannelMode {
        match self {
            Self::GtOnly => GtChannelMode::GtOnly,
            Self::ModDrop | Self::ProbsOnly => GtChannelMode::ProbsOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub gnn_steps: usize,
    pub gru_depth: usize,
    pub clip_norm: f64,
    pub moddrop_start: f64,
    pub moddrop_taper_epochs: usize,
    pub neighbor_order: NeighborOrder,
    pub seed: u64,
    pub msg: usize,
    pub hidden: usize,
    pub r_dim: usize,
    pub mlp_hidden: usize,
    pub aggregator: Aggregator,
    pub use_features: bool,
    pub dist_scale: f64,
    pub channel: ChannelSchedule,
    /// Instances stacked into one tape.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 20,
            lr_decay_every: 120,
            lr_decay_factor: 0.1,
            gnn_steps: 6,
            gru_depth: 2,
            clip_norm: 2.0,
            moddrop_start: 0.5,
            moddrop_taper_epochs: 250,
            neighbor_order: NeighborOrder::Ascending,
            seed: 0,
            msg: 64,
            hidden: 64,
            r_dim: 64,
            mlp_hidden: 64,
            aggregator: Aggregator::Gru,
            use_features: true,
            dist_scale: 0.1,
            channel: ChannelSchedule::ModDrop,
            micro_batch: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.gnn_steps == 0 {
            return bad("gnn_steps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.moddrop_start) {
            return bad("moddrop_start must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !self.dist_scale.is_finite() {
            return bad("lr must be positive, weight_decay non-negative");
        }
        self.model_dims(0).validate()
    }

    pub fn model_dims(&self, feature_dim: usize) -> ModelDims {
        ModelDims {
            feature_dim,
            msg: self.msg,
            hidden: self.hidden,
            r_dim: self.r_dim,
            mlp_hidden: self.mlp_hidden,
            gru_depth: self.gru_depth,
            aggregator: self.aggregator,
        }
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            gnn_steps: self.gnn_steps,
            use_features: self.use_features,
            dist_scale: self.dist_scale,
            neighbor_order: self.neighbor_order,
        }
    }

    /// Options used at evaluation time: same network, fixed neighbor order.
    pub fn eval_options(&self) -> ForwardOptions {
        ForwardOptions {
            neighbor_order: NeighborOrder::Ascending,
            ..self.forward_options()
        }
    }
}

/// Probability of hiding the ground-truth channel at `epoch`.
pub fn moddrop_probability(epoch: usize, start: f64, taper_epochs: usize) -> f64 {
    if taper_epochs == 0 {
        return 1.0;
    }
    (start + (1.0 - start) * epoch as f64 / taper_epochs as f64).min(1.0)
}

/// Channel for one training instance at `epoch`.
pub fn moddrop_mask<R: Rng + ?Sized>(epoch: usize, config: &TrainConfig, rng: &mut R) -> GtChannelMode {
    match config.channel {
        ChannelSchedule::ProbsOnly => GtChannelMode::ProbsOnly,
        ChannelSchedule::GtOnly => GtChannelMode::GtOnly,
        ChannelSchedule::ModDrop => {
            let p = moddrop_probability(epoch, config.moddrop_start, config.moddrop_taper_epochs);
            if rng.random::<f64>() < p {
                GtChannelMode::ProbsOnly
            } else {
                GtChannelMode::GtOnly
            }
        }
    }
}

/// One (graph, target) query with ground-truth next hops for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub graph: usize,
    pub target: usize,
    pub labels: Vec<i64>,
}

/// Every (graph, target) with at least one other node that can reach the
/// target.
pub fn build_examples(graphs: &[TopoGraph]) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (gi, g) in graphs.iter().enumerate() {
        for target in g.valid_nodes() {
            let labels = gt_labels(g, target)?;
            if labels.iter().enumerate().any(|(i, &l)| i != target && l >= 0) {
                out.push(TrainingExample {
                    graph: gi,
                    target,
                    labels,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_hspl: f64,
    pub moddrop_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub hspl: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub best: NeuralPlannerParams,
    pub best_epoch: usize,
    pub best_val: EvalSummary,
    pub last: NeuralPlannerParams,
    pub curve: Vec<CurveRow>,
}

/// Next-hop accuracy (pairs at least two hops apart) and H-SPL of the
/// planner over every ordered pair of every graph.
pub fn evaluate_planner(
    params: &NeuralPlannerParams,
    graphs: &[TopoGraph],
    mode: GtChannelMode,
    opts: &ForwardOptions,
) -> Result<(EvalSummary, Vec<PairOutcome>)> {
    let mut pairs = Vec::new();
    for g in graphs {
        pairs.extend(evaluate_next_hop_planner(g, |t| next_hop_table(params, g, t, mode, opts))?);
    }
    let summary = EvalSummary {
        accuracy: accuracy_metric(&pairs, 2)?,
        hspl: hspl_of_pairs(&pairs, 2),
        n_pairs: pairs.iter().filter(|p| p.gt_hops >= 2).count(),
    };
    Ok((summary, pairs))
}

/// Loss and gradients of one micro-batch, accumulated into `params`
/// scaled by `weight`. Returns the summed per-instance loss.
fn accumulate_batch(
    params: &mut NeuralPlannerParams,
    graphs: &[TopoGraph],
    batch: &[(&TrainingExample, GtChannelMode)],
    opts: &ForwardOptions,
    rng: &mut ChaCha8Rng,
    weight: f64,
) -> Result<f64> {
    let inputs: Vec<PlannerInput<'_>> = batch
        .iter()
        .map(|(ex, mode)| PlannerInput {
            graph: &graphs[ex.graph],
            target: ex.target,
            mode: *mode,
        })
        .collect();
    let mut tape = Tape::new();
    let pass = forward_on_tape(&mut tape, params, &inputs, opts, Some(rng))?;
    let mut rows = Vec::new();
    let mut onehot = Vec::new();
    let mut per_instance = vec![0usize; batch.len()];
    for (row, &(bi, node)) in pass.rows.iter().enumerate() {
        let label = batch[bi].0.labels[node];
        if label >= 0 {
            rows.push(row);
            let mut t = vec![0.0; N_MAX];
            t[label as usize] = 1.0;
            onehot.push(t);
            per_instance[bi] += 1;
        }
    }
    if rows.is_empty() {
        return Ok(0.0);
    }
    // Weight each row so every instance contributes its own mean.
    for (t, &row) in onehot.iter_mut().zip(&rows) {
        let bi = pass.rows[row].0;
        let w = rows.len() as f64 / per_instance[bi] as f64;
        t.iter_mut().for_each(|v| *v *= w);
    }
    let picked = tape.gather_rows(pass.logits, &rows)?;
    let loss = tape.cross_entropy(picked, &onehot.concat())?;
    // `loss` is now the sum of per-instance means.
    let loss = tape.scale(loss, weight);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    for (t, &v) in params.tensors.iter_mut().zip(&pass.params) {
        if let Some(g) = grads.get(v) {
            t.accumulate_grad(g);
        }
    }
    Ok(value / weight)
}

/// Supervised training with Adam. `val` graphs are scored every epoch and
/// the best-accuracy parameters are kept.
pub fn train(
    graphs: &[TopoGraph],
    examples: &[TrainingExample],
    val: &[TopoGraph],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feature_dim = graphs[examples[0].graph].feature_dim;
    let mut params = NeuralPlannerParams::init(config.model_dims(feature_dim), config.seed)?;
    let mut adam = AdamState::new(&params.tensors, config.lr, config.weight_decay, config.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e);
    let opts = config.forward_options();
    let eval_opts = config.eval_options();
    let eval_mode = config.channel.eval_mode();

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(NeuralPlannerParams, usize, EvalSummary)> = None;

    for epoch in 0..config.epochs {
        adam.lr = step_decay_lr(config.lr, epoch, config.lr_decay_every, config.lr_decay_factor);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let tagged: Vec<(&TrainingExample, GtChannelMode)> = batch
                .iter()
                .map(|&i| (&examples[i], moddrop_mask(epoch, config, &mut rng)))
                .collect();
            // Stack only instances whose graphs have the same size.
            let mut groups: Vec<Vec<(&TrainingExample, GtChannelMode)>> = Vec::new();
            for item in tagged {
                let n = graphs[item.0.graph].n_nodes;
                match groups.iter_mut().find(|g| graphs[g[0].0.graph].n_nodes == n && g.len() < config.micro_batch) {
                    Some(g) => g.push(item),
                    None => groups.push(vec![item]),
                }
            }
            let weight = 1.0 / batch.len() as f64;
            for group in &groups {
                total += accumulate_batch(&mut params, graphs, group, &opts, &mut rng, weight)?;
            }
            adam.step(&mut params.tensors);
        }
        if !params.all_finite() {
            return Err(Error::Config(format!("training diverged at epoch {epoch}")));
        }
        let val_summary = if val.is_empty() {
            EvalSummary {
                accuracy: 0.0,
                hspl: 0.0,
                n_pairs: 0,
            }
        } else {
            evaluate_planner(&params, val, eval_mode, &eval_opts)?.0
        };
        let row = CurveRow {
            epoch,
            train_loss: total / examples.len() as f64,
            val_accuracy: val_summary.accuracy,
            val_hspl: val_summary.hspl,
            moddrop_p: match config.channel {
                ChannelSchedule::ModDrop => {
                    moddrop_probability(epoch, config.moddrop_start, config.moddrop_taper_epochs)
                }
                ChannelSchedule::ProbsOnly => 1.0,
                ChannelSchedule::GtOnly => 0.0,
            },
        };
        on_epoch(&row);
        curve.push(row);
        // Without a validation split the latest parameters win.
        if val.is_empty() || best.as_ref().is_none_or(|(_, _, b)| val_summary.accuracy > b.accuracy) {
            best = Some((params.clone(), epoch, val_summary));
        }
    }
    let (best, best_epoch, best_val) = match best {
        Some(b) => b,
        None => (params.clone(), 0, EvalSummary { accuracy: 0.0, hspl: 0.0, n_pairs: 0 }),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val,
        last: params,
        curve,
    })
}
