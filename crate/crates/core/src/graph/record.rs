//! Line-delimited graph dataset records.

use serde::{Deserialize, Serialize};

use super::{validate_graph, TopoGraph, N_MAX};
use crate::io_util::round_sig9;
use crate::{Error, Result};

/// One graph as stored in a dataset file. Matrices are `n_nodes` square
/// (padding is not written); floats carry 9 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub env_seed: u64,
    pub n_nodes: usize,
    pub locations: Vec<[f64; 2]>,
    pub distances: Vec<Vec<f64>>,
    pub edge_probs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_adjacency: Option<Vec<Vec<u8>>>,
    pub features: Vec<Vec<f64>>,
    pub grid_ref: String,
}

impl GraphRecord {
    pub fn from_graph(g: &TopoGraph, env_seed: u64, grid_ref: impl Into<String>) -> Self {
        let nodes = g.valid_nodes();
        let r = round_sig9;
        Self {
            env_seed,
            n_nodes: nodes.len(),
            locations: nodes.iter().map(|&i| [r(g.locations[i][0]), r(g.locations[i][1])]).collect(),
            distances: nodes.iter().map(|&i| nodes.iter().map(|&j| r(g.dist(i, j))).collect()).collect(),
            edge_probs: nodes.iter().map(|&i| nodes.iter().map(|&j| r(g.prob(i, j))).collect()).collect(),
            gt_adjacency: g.gt_adjacency.as_ref().map(|_| {
                nodes
                    .iter()
                    .map(|&i| nodes.iter().map(|&j| g.gt_adjacent(i, j) == Some(true)).map(u8::from).collect())
                    .collect()
            }),
            features: nodes.iter().map(|&i| g.feature_row(i).iter().map(|&v| r(v)).collect()).collect(),
            grid_ref: grid_ref.into(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record is always serializable")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Rebuilds the padded graph and checks every invariant.
    pub fn to_graph(&self) -> Result<TopoGraph> {
        let n = self.n_nodes;
        if n > N_MAX {
            return Err(Error::InvalidGraph(format!("{n} nodes exceed capacity {N_MAX}")));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if self.locations.len() != n || !square(&self.distances) || !square(&self.edge_probs) {
            return Err(Error::InvalidGraph("record matrices do not match n_nodes".into()));
        }
        let k = self.features.first().map_or(0, Vec::len);
        if self.features.len() != n || self.features.iter().any(|f| f.len() != k) {
            return Err(Error::InvalidGraph("feature rows do not match n_nodes".into()));
        }
        let mut g = TopoGraph::empty(n, k);
        for i in 0..n {
            g.locations[i] = self.locations[i];
            g.features[i * k..(i + 1) * k].copy_from_slice(&self.features[i]);
            for j in 0..n {
                g.distances[i * N_MAX + j] = self.distances[i][j];
                g.edge_probs[i * N_MAX + j] = self.edge_probs[i][j];
            }
        }
        if let Some(adj) = &self.gt_adjacency {
            if adj.len() != n || adj.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidGraph("gt_adjacency does not match n_nodes".into()));
            }
            let mut a = vec![false; N_MAX * N_MAX];
            for i in 0..n {
                for j in 0..n {
                    a[i * N_MAX + j] = match adj[i][j] {
                        0 => false,
                        1 => true,
                        v => return Err(Error::InvalidGraph(format!("gt_adjacency entry {v} is not 0/1"))),
                    };
                }
            }
            g.gt_adjacency = Some(a);
        }
        if g.locations.iter().flatten().chain(&g.features).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGraph("non-finite location or feature".into()));
        }
        let violations = validate_graph(&g);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidGraph(format!("{v} ({} violations)", violations.len())));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_graph;

    #[test]
    fn save_load_save_is_bit_identical() {
        let g = random_graph(17, 9, 21);
        let line = GraphRecord::from_graph(&g, 5, "grids/env_5.grid").to_line();
        let back = GraphRecord::parse_line(&line).unwrap().to_graph().unwrap();
        let again = GraphRecord::from_graph(&back, 5, "grids/env_5.grid").to_line();
        assert_eq!(line, again);
        for (a, b) in back.edge_probs.iter().zip(&g.edge_probs) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
    }

    #[test]
    fn rejects_malformed_records() {
        let g = random_graph(3, 2, 22);
        let mut rec = GraphRecord::from_graph(&g, 0, "x");
        rec.edge_probs[0][1] = 0.9;
        assert!(rec.to_graph().is_err());
        let mut rec = GraphRecord::from_graph(&g, 0, "x");
        rec.n_nodes = 4;
        assert!(rec.to_graph().is_err());
        let mut rec = GraphRecord::from_graph(&g, 0, "x");
        rec.gt_adjacency.as_mut().unwrap()[0][1] = 2;
        assert!(rec.to_graph().is_err());
        assert!(GraphRecord::parse_line("{\"env_seed\": 1}").is_err());
    }
}
