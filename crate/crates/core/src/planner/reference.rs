//! Straight-line re-implementation of the planner used as a test oracle:
//! explicit per-pair messages over full `[n_i, n_j]` vectors, one node at a
//! time, no tape.

use super::params::{Aggregator, NeuralPlannerParams};
use super::ForwardOptions;
use crate::graph::{build_embedding, GtChannelMode, TopoGraph, N_MAX};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `v (1 x rows) * W (rows x cols)`.
fn vecmat(v: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &x) in v.iter().enumerate() {
        for c in 0..cols {
            out[c] += x * w[r * cols + c];
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn t<'a>(p: &'a NeuralPlannerParams, name: &str) -> &'a [f64] {
    p.get(name).unwrap().values()
}

pub(crate) fn message(p: &NeuralPlannerParams, ni: &[f64], nj: &[f64]) -> Vec<f64> {
    let m = p.dims.msg;
    let pair = [ni, nj].concat();
    let lin = add(&vecmat(&pair, t(p, "w1"), m), t(p, "b1"));
    let gate = add(&vecmat(&pair, t(p, "w2"), m), t(p, "b2"));
    lin.iter().zip(&gate).map(|(a, g)| a * sigmoid(*g)).collect()
}

pub(crate) fn gru_cell(p: &NeuralPlannerParams, l: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = p.dims.hidden;
    let gx = add(&vecmat(x, t(p, &format!("gru{l}.wx")), 3 * hd), t(p, &format!("gru{l}.bx")));
    let gh = add(&vecmat(h, t(p, &format!("gru{l}.wh")), 3 * hd), t(p, &format!("gru{l}.bh")));
    (0..hd)
        .map(|k| {
            let r = sigmoid(gx[k] + gh[k]);
            let z = sigmoid(gx[hd + k] + gh[hd + k]);
            let n = (gx[2 * hd + k] + r * gh[2 * hd + k]).tanh();
            (1.0 - z) * n + z * h[k]
        })
        .collect()
}

pub(crate) fn mlp(p: &NeuralPlannerParams, x: &[f64]) -> Vec<f64> {
    let a: Vec<f64> = add(&vecmat(x, t(p, "mlp.wa"), p.dims.mlp_hidden), t(p, "mlp.ba"))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    add(&vecmat(&a, t(p, "mlp.wb"), p.dims.r_dim), t(p, "mlp.bb"))
}

/// Full `N_MAX x N_MAX` action matrix with ascending neighbor order.
pub(crate) fn forward(
    p: &NeuralPlannerParams,
    g: &TopoGraph,
    target: usize,
    mode: GtChannelMode,
    opts: &ForwardOptions,
) -> Vec<f64> {
    let dims = p.dims;
    let nodes = g.valid_nodes();
    let x: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&i| {
            let mut e = build_embedding(g, i, target, mode).unwrap();
            if !opts.use_features {
                e.visual.iter_mut().for_each(|v| *v = 0.0);
            }
            e.dist_row.iter_mut().for_each(|v| *v *= opts.dist_scale);
            e.to_vec()
        })
        .collect();
    let mut r = vec![vec![0.0; dims.r_dim]; nodes.len()];
    let mut h = vec![vec![vec![0.0; dims.hidden]; dims.gru_depth]; nodes.len()];
    for _ in 0..opts.gnn_steps {
        let nv: Vec<Vec<f64>> = x.iter().zip(&r).map(|(a, b)| [a.as_slice(), b].concat()).collect();
        let mut new_r = Vec::new();
        for i in 0..nodes.len() {
            // Materialize every message, including the self message, and
            // only consume the ones from other nodes.
            let all: Vec<Vec<f64>> = (0..nodes.len()).map(|j| message(p, &nv[i], &nv[j])).collect();
            let msgs: Vec<&Vec<f64>> = (0..nodes.len()).filter(|&j| j != i).map(|j| &all[j]).collect();
            match dims.aggregator {
                Aggregator::Gru => {
                    for m in msgs {
                        let mut input = m.clone();
                        for l in 0..dims.gru_depth {
                            h[i][l] = gru_cell(p, l, &input, &h[i][l]);
                            input = h[i][l].clone();
                        }
                    }
                    new_r.push(mlp(p, &h[i][dims.gru_depth - 1]));
                }
                Aggregator::Mean => {
                    let mut mean = vec![0.0; dims.msg];
                    for m in &msgs {
                        mean = add(&mean, m);
                    }
                    if !msgs.is_empty() {
                        mean.iter_mut().for_each(|v| *v /= msgs.len() as f64);
                    }
                    new_r.push(mlp(p, &mean));
                }
            }
        }
        r = new_r;
    }
    let mut out = vec![0.0; N_MAX * N_MAX];
    for (li, &i) in nodes.iter().enumerate() {
        let logits = vecmat(&r[li], t(p, "readout"), N_MAX);
        let mx = nodes.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = nodes.iter().map(|&j| (logits[j] - mx).exp()).sum();
        for &j in &nodes {
            out[i * N_MAX + j] = (logits[j] - mx).exp() / z;
        }
    }
    out
}
