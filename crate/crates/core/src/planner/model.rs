use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Aggregator, NeuralPlannerParams};
use crate::autodiff::{Tape, Var};
use crate::graph::{build_embedding, GtChannelMode, TopoGraph, N_MAX};
use crate::{Error, Result};

/// Order in which a node's incoming messages enter its GRU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborOrder {
    Ascending,
    /// Fresh random permutation per node and round; needs an rng.
    ShuffledPerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub gnn_steps: usize,
    /// Zero the visual block of every node vector.
    pub use_features: bool,
    /// Multiplier applied to the distance row before it enters the network.
    pub dist_scale: f64,
    pub neighbor_order: NeighborOrder,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            gnn_steps: 6,
            use_features: true,
            dist_scale: 0.1,
            neighbor_order: NeighborOrder::Ascending,
        }
    }
}

/// One graph/target query fed to the network.
#[derive(Debug, Clone, Copy)]
pub struct PlannerInput<'a> {
    pub graph: &'a TopoGraph,
    pub target: usize,
    pub mode: GtChannelMode,
}

/// Tape handles produced by one forward pass over a batch of inputs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Leaf handle of every parameter tensor, in parameter order.
    pub params: Vec<Var>,
    /// Masked logits, one row per valid node of every input.
    pub logits: Var,
    /// Row-wise softmax of `logits`.
    pub probs: Var,
    /// `(input index, node index)` of each row.
    pub rows: Vec<(usize, usize)>,
}

/// Row-major `N_MAX x N_MAX` next-hop distributions; padded rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMatrix {
    pub probs: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ActionMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * N_MAX..(i + 1) * N_MAX]
    }
}

/// Parameter handles on a tape plus the layer helpers built from them.
struct Net {
    w1: Var,
    w2: Var,
    b1: Var,
    b2: Var,
    gru: Vec<[Var; 4]>,
    mlp: [Var; 4],
    readout: Var,
    msg: usize,
}

impl Net {
    fn load(tape: &mut Tape, p: &NeuralPlannerParams) -> (Self, Vec<Var>) {
        let vars: Vec<Var> = p.tensors.iter().map(|t| tape.leaf(t)).collect();
        let ix = p.index();
        let gru_layers = if p.dims.aggregator == Aggregator::Gru { p.dims.gru_depth } else { 0 };
        let gru = (0..gru_layers)
            .map(|l| {
                let o = ix.gru + 4 * l;
                [vars[o], vars[o + 1], vars[o + 2], vars[o + 3]]
            })
            .collect();
        let net = Self {
            w1: vars[ix.w1],
            w2: vars[ix.w2],
            b1: vars[ix.b1],
            b2: vars[ix.b2],
            gru,
            mlp: [vars[ix.mlp], vars[ix.mlp + 1], vars[ix.mlp + 2], vars[ix.mlp + 3]],
            readout: vars[ix.readout],
            msg: p.dims.msg,
        };
        (net, vars)
    }

    /// `z[:, :M] * sigmoid(z[:, M:])` for pre-activations `z = [W1 n | W2 n]`.
    fn gate(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let lin = tape.slice_cols(z, 0, self.msg)?;
        let g = tape.slice_cols(z, self.msg, 2 * self.msg)?;
        let g = tape.sigmoid(g);
        Ok(tape.hadamard(lin, g)?)
    }

    fn gru_cell(&self, tape: &mut Tape, layer: usize, x: Var, h: Var) -> Result<Var> {
        let [wx, wh, bx, bh] = self.gru[layer];
        Ok(tape.gru_cell(x, h, wx, wh, bx, bh)?)
    }

    fn gru_stack(&self, tape: &mut Tape, x: Var, hs: &mut [Var]) -> Result<()> {
        let mut input = x;
        for (l, h) in hs.iter_mut().enumerate() {
            *h = self.gru_cell(tape, l, input, *h)?;
            input = *h;
        }
        Ok(())
    }

    fn mlp(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let [wa, ba, wb, bb] = self.mlp;
        let a = tape.matmul(x, wa)?;
        let a = tape.add_row_bias(a, ba)?;
        let a = tape.relu(a);
        let b = tape.matmul(a, wb)?;
        Ok(tape.add_row_bias(b, bb)?)
    }
}

fn input_rows(input: &PlannerInput<'_>, opts: &ForwardOptions, k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let g = input.graph;
    if g.feature_dim != k {
        return Err(Error::InvalidGraph(format!(
            "graph has {} features, model expects {k}",
            g.feature_dim
        )));
    }
    let nodes = g.valid_nodes();
    let mut x = Vec::new();
    for &i in &nodes {
        let mut e = build_embedding(g, i, input.target, input.mode)?;
        if !opts.use_features {
            e.visual.iter_mut().for_each(|v| *v = 0.0);
        }
        e.dist_row.iter_mut().for_each(|v| *v *= opts.dist_scale);
        x.extend(e.to_vec());
    }
    Ok((nodes, x))
}

/// Records the full planner on `tape` for a batch of inputs that share the
/// same number of valid nodes.
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &NeuralPlannerParams,
    inputs: &[PlannerInput<'_>],
    opts: &ForwardOptions,
    mut rng: Option<&mut R>,
) -> Result<ForwardPass> {
    if opts.gnn_steps == 0 {
        return Err(Error::Config("gnn_steps must be at least 1".into()));
    }
    let first = inputs.first().ok_or(Error::EmptyDataset)?;
    let n = first.graph.n_nodes;
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let dims = params.dims;
    let e = dims.embed_in();
    let d = dims.node_dim();
    let b = inputs.len();
    let rows_total = b * n;

    let mut x = Vec::with_capacity(rows_total * e);
    let mut rows = Vec::with_capacity(rows_total);
    let mut mask = Vec::with_capacity(rows_total * N_MAX);
    for (bi, input) in inputs.iter().enumerate() {
        if input.graph.n_nodes != n {
            return Err(Error::InvalidGraph("batched graphs must have the same node count".into()));
        }
        let (nodes, xi) = input_rows(input, opts, dims.feature_dim)?;
        x.extend(xi);
        for &i in &nodes {
            rows.push((bi, i));
            mask.extend(
                input.graph.valid_mask.iter().map(|&v| if v { 0.0 } else { f64::NEG_INFINITY }),
            );
        }
    }

    let (net, vars) = Net::load(tape, params);
    let x = tape.constant(rows_total, e, x)?;

    // Split [W1; W2] into the blocks acting on x_i, r_i, x_j, r_j.
    let block = |tape: &mut Tape, start: usize, end: usize| -> Result<Var> {
        let a = tape.slice_rows(net.w1, start, end)?;
        let c = tape.slice_rows(net.w2, start, end)?;
        Ok(tape.concat_cols(&[a, c])?)
    };
    let w_xi = block(tape, 0, e)?;
    let w_ri = block(tape, e, d)?;
    let w_xj = block(tape, d, d + e)?;
    let w_rj = block(tape, d + e, 2 * d)?;
    let bias = tape.concat_cols(&[net.b1, net.b2])?;
    let x_self = tape.matmul(x, w_xi)?;
    let x_other = tape.matmul(x, w_xj)?;
    let x_other = tape.add_row_bias(x_other, bias)?;

    let hd = dims.hidden;
    let zeros_h = tape.constant(rows_total, hd, vec![0.0; rows_total * hd])?;
    let mut hs = vec![zeros_h; net.gru.len()];
    let mut r: Option<Var> = None;

    for _ in 0..opts.gnn_steps {
        let (own, other) = match r {
            None => (x_self, x_other),
            Some(r) => {
                let a = tape.matmul(r, w_ri)?;
                let a = tape.add(x_self, a)?;
                let c = tape.matmul(r, w_rj)?;
                let c = tape.add(x_other, c)?;
                (a, c)
            }
        };
        // The mean is taken in a fixed order so it stays bit-identical
        // under any relabelling of the neighbors.
        let order = match dims.aggregator {
            Aggregator::Gru => neighbor_orders(n, opts.neighbor_order, rng.as_deref_mut())?,
            Aggregator::Mean => neighbor_orders::<R>(n, NeighborOrder::Ascending, None)?,
        };
        let pooled = match dims.aggregator {
            Aggregator::Gru => {
                for t in 0..n.saturating_sub(1) {
                    let idx: Vec<usize> = (0..rows_total).map(|row| row - row % n + order[row % n][t]).collect();
                    let m = tape.gated_gather(own, other, &idx)?;
                    net.gru_stack(tape, m, &mut hs)?;
                }
                *hs.last().expect("gru has at least one layer")
            }
            Aggregator::Mean => {
                if n == 1 {
                    tape.constant(rows_total, dims.msg, vec![0.0; rows_total * dims.msg])?
                } else {
                    let mut acc: Option<Var> = None;
                    for t in 0..n - 1 {
                        let idx: Vec<usize> = (0..rows_total).map(|row| row - row % n + order[row % n][t]).collect();
                        let m = tape.gated_gather(own, other, &idx)?;
                        acc = Some(match acc {
                            None => m,
                            Some(a) => tape.add(a, m)?,
                        });
                    }
                    let acc = acc.expect("at least one neighbor");
                    tape.scale(acc, 1.0 / (n - 1) as f64)
                }
            }
        };
        r = Some(net.mlp(tape, pooled)?);
    }

    let r = r.expect("at least one round");
    let logits = tape.matmul(r, net.readout)?;
    let mask = tape.constant(rows_total, N_MAX, mask)?;
    let logits = tape.add(logits, mask)?;
    let probs = tape.softmax_rows(logits);
    Ok(ForwardPass {
        params: vars,
        logits,
        probs,
        rows,
    })
}

/// Local neighbor indices for every local node, one list per node.
fn neighbor_orders<R: Rng + ?Sized>(n: usize, order: NeighborOrder, rng: Option<&mut R>) -> Result<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
    if order == NeighborOrder::ShuffledPerStep {
        let rng = rng.ok_or_else(|| Error::Config("shuffled neighbor order needs an rng".into()))?;
        for o in &mut out {
            o.shuffle(rng);
        }
    }
    Ok(out)
}

/// Next-hop distributions for one graph and target.
pub fn forward(
    params: &NeuralPlannerParams,
    graph: &TopoGraph,
    target: usize,
    mode: GtChannelMode,
    opts: &ForwardOptions,
) -> Result<ActionMatrix> {
    if opts.neighbor_order != NeighborOrder::Ascending {
        return Err(Error::Config("inference uses ascending neighbor order".into()));
    }
    let mut tape = Tape::new();
    let input = PlannerInput { graph, target, mode };
    let pass = forward_on_tape::<rand_chacha::ChaCha8Rng>(&mut tape, params, &[input], opts, None)?;
    let vals = tape.value(pass.probs);
    let mut probs = vec![0.0; N_MAX * N_MAX];
    for (row, &(_, i)) in pass.rows.iter().enumerate() {
        probs[i * N_MAX..(i + 1) * N_MAX].copy_from_slice(&vals[row * N_MAX..(row + 1) * N_MAX]);
    }
    Ok(ActionMatrix {
        probs,
        valid: graph.valid_mask.clone(),
    })
}

/// Same as [`forward`] for a model whose aggregator is the mean pool.
pub fn forward_meanpool_ablation(
    params: &NeuralPlannerParams,
    graph: &TopoGraph,
    target: usize,
    mode: GtChannelMode,
    opts: &ForwardOptions,
) -> Result<ActionMatrix> {
    if params.dims.aggregator != Aggregator::Mean {
        return Err(Error::Config("parameters were built for the GRU aggregator".into()));
    }
    forward(params, graph, target, mode, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Deterministic,
    Sampling,
}

/// Picks the next node from row `current` of `a`.
pub fn predict_next<R: Rng + ?Sized>(a: &ActionMatrix, current: usize, mode: PredictMode, rng: &mut R) -> usize {
    let row = a.row(current);
    let valid = |j: usize| a.valid[j];
    match mode {
        PredictMode::Deterministic => {
            let mut best = None;
            for j in (0..N_MAX).filter(|&j| valid(j)) {
                if best.is_none_or(|(_, p)| row[j] > p) {
                    best = Some((j, row[j]));
                }
            }
            best.map_or(current, |(j, _)| j)
        }
        PredictMode::Sampling => {
            let total: f64 = (0..N_MAX).filter(|&j| valid(j)).map(|j| row[j]).sum();
            let mut u = rng.random::<f64>() * total;
            let mut last = current;
            for j in (0..N_MAX).filter(|&j| valid(j)) {
                if row[j] <= 0.0 {
                    continue;
                }
                last = j;
                if u < row[j] {
                    return j;
                }
                u -= row[j];
            }
            last
        }
    }
}

/// Argmax next hop of every valid node toward `target`.
pub fn next_hop_table(
    params: &NeuralPlannerParams,
    graph: &TopoGraph,
    target: usize,
    mode: GtChannelMode,
    opts: &ForwardOptions,
) -> Result<Vec<Option<usize>>> {
    let a = forward(params, graph, target, mode, opts)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    Ok((0..N_MAX)
        .map(|i| graph.is_valid(i).then(|| predict_next(&a, i, PredictMode::Deterministic, &mut rng)))
        .collect())
}

/// Runs the message function on a single pair of node vectors `[x, r]`.
pub fn message(n_i: &[f64], n_j: &[f64], params: &NeuralPlannerParams) -> Result<Vec<f64>> {
    let d = params.dims.node_dim();
    if n_i.len() != d || n_j.len() != d {
        return Err(Error::InvalidGraph(format!("node vectors must have length {d}")));
    }
    let mut tape = Tape::new();
    let (net, _) = Net::load(&mut tape, params);
    let pair = tape.constant(1, 2 * d, [n_i, n_j].concat())?;
    let lin = tape.matmul(pair, net.w1)?;
    let lin = tape.add_row_bias(lin, net.b1)?;
    let g = tape.matmul(pair, net.w2)?;
    let g = tape.add_row_bias(g, net.b2)?;
    let z = tape.concat_cols(&[lin, g])?;
    let m = net.gate(&mut tape, z)?;
    Ok(tape.value(m).to_vec())
}

/// Feeds `messages` in order through the stacked GRU starting from the
/// per-layer states `h`, then applies the MLP to the top layer.
/// Returns `(r', h')`.
pub fn accumulate(
    messages: &[Vec<f64>],
    h: &[Vec<f64>],
    params: &NeuralPlannerParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dims = params.dims;
    let mut tape = Tape::new();
    let (net, _) = Net::load(&mut tape, params);
    match dims.aggregator {
        Aggregator::Gru => {
            if h.len() != dims.gru_depth || h.iter().any(|v| v.len() != dims.hidden) {
                return Err(Error::InvalidGraph("hidden state does not match the GRU".into()));
            }
            let mut hs = h
                .iter()
                .map(|v| tape.constant(1, dims.hidden, v.clone()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            for m in messages {
                let mv = tape.constant(1, dims.msg, m.clone())?;
                net.gru_stack(&mut tape, mv, &mut hs)?;
            }
            let r = net.mlp(&mut tape, *hs.last().expect("depth >= 1"))?;
            Ok((tape.value(r).to_vec(), hs.iter().map(|&v| tape.value(v).to_vec()).collect()))
        }
        Aggregator::Mean => {
            if messages.iter().any(|m| m.len() != dims.msg) {
                return Err(Error::InvalidGraph("message width mismatch".into()));
            }
            let mut sorted: Vec<&Vec<f64>> = messages.iter().collect();
            sorted.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut mean = vec![0.0; dims.msg];
            for m in sorted {
                mean.iter_mut().zip(m).for_each(|(a, b)| *a += b);
            }
            if !messages.is_empty() {
                mean.iter_mut().for_each(|a| *a /= messages.len() as f64);
            }
            let mv = tape.constant(1, dims.msg, mean)?;
            let r = net.mlp(&mut tape, mv)?;
            Ok((tape.value(r).to_vec(), Vec::new()))
        }
    }
}
