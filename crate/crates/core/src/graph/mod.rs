//! The valued topological graph shared by every planner.
//!
//! A [`TopoGraph`] has a fixed capacity of [`N_MAX`] nodes. Real nodes are
//! flagged in `valid_mask`; every matrix is zero on padded rows and columns.

mod record;

pub use record::GraphRecord;

use crate::{Error, Result};

/// Node capacity of every graph and the width of node-indexed inputs.
pub const N_MAX: usize = 32;

/// Slack allowed on the triangle inequality for distances rounded to 9
/// significant digits.
const TRIANGLE_TOL: f64 = 1e-6;

thread_local! {
    static GT_CHANNEL_READS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of node embeddings built on this thread that exposed the
/// ground-truth adjacency channel.
pub fn gt_channel_reads() -> usize {
    GT_CHANNEL_READS.with(std::cell::Cell::get)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoGraph {
    pub n_nodes: usize,
    /// Node positions in meters, `N_MAX` rows.
    pub locations: Vec<[f64; 2]>,
    /// `N_MAX x N_MAX`, row-major, meters.
    pub distances: Vec<f64>,
    /// `N_MAX x N_MAX`, row-major, probabilities.
    pub edge_probs: Vec<f64>,
    /// Width of each feature row.
    pub feature_dim: usize,
    /// `N_MAX x feature_dim`, row-major.
    pub features: Vec<f64>,
    /// `N_MAX x N_MAX` true traversability, when known.
    pub gt_adjacency: Option<Vec<bool>>,
    pub valid_mask: Vec<bool>,
}

/// Which connectivity channel(s) a node embedding exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GtChannelMode {
    ProbsOnly,
    GtOnly,
    Both,
}

/// Per-node network input `[visual, edge_row, is_target, dist_row, one_hot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    pub visual: Vec<f64>,
    /// Edge-probability row followed by the ground-truth adjacency row.
    pub edge_row: Vec<f64>,
    pub is_target: f64,
    pub dist_row: Vec<f64>,
    pub one_hot: Vec<f64>,
}

impl NodeEmbedding {
    pub fn len(feature_dim: usize) -> usize {
        feature_dim + 2 * N_MAX + 1 + N_MAX + N_MAX
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::len(self.visual.len()));
        v.extend_from_slice(&self.visual);
        v.extend_from_slice(&self.edge_row);
        v.push(self.is_target);
        v.extend_from_slice(&self.dist_row);
        v.extend_from_slice(&self.one_hot);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningInstance {
    pub graph: TopoGraph,
    pub source: usize,
    pub target: usize,
    /// Next hop toward `target` per node, `-1` where unreachable.
    pub labels: Option<Vec<i64>>,
}

/// One broken [`TopoGraph`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { field: &'static str, expected: usize, found: usize },
    MaskCount { expected: usize, found: usize },
    Asymmetric { matrix: &'static str, i: usize, j: usize },
    NonzeroDiagonal { matrix: &'static str, i: usize },
    OutOfRange { matrix: &'static str, i: usize, j: usize, value: f64 },
    Triangle { i: usize, j: usize, k: usize },
    PaddingNonzero { field: &'static str, i: usize, j: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Shape { field, expected, found } => {
                write!(f, "{field}: expected {expected} entries, found {found}")
            }
            Violation::MaskCount { expected, found } => {
                write!(f, "valid_mask has {found} true entries, n_nodes is {expected}")
            }
            Violation::Asymmetric { matrix, i, j } => write!(f, "{matrix}: asymmetry at ({i},{j})"),
            Violation::NonzeroDiagonal { matrix, i } => write!(f, "{matrix}: nonzero diagonal at {i}"),
            Violation::OutOfRange { matrix, i, j, value } => {
                write!(f, "{matrix}: value {value} out of range at ({i},{j})")
            }
            Violation::Triangle { i, j, k } => {
                write!(f, "distances: triangle inequality fails for ({i},{j},{k})")
            }
            Violation::PaddingNonzero { field, i, j } => {
                write!(f, "{field}: nonzero padding entry at ({i},{j})")
            }
        }
    }
}

impl TopoGraph {
    /// Builds a graph whose first `n` slots are real nodes, with Euclidean
    /// distances computed from `locations`.
    pub fn from_locations(
        locations: &[[f64; 2]],
        edge_probs: &[Vec<f64>],
        features: &[Vec<f64>],
        gt_adjacency: Option<&[Vec<bool>]>,
    ) -> Result<Self> {
        let n = locations.len();
        if n > N_MAX {
            return Err(Error::InvalidGraph(format!("{n} nodes exceed capacity {N_MAX}")));
        }
        let feature_dim = features.first().map_or(0, Vec::len);
        if features.len() != n || features.iter().any(|f| f.len() != feature_dim) {
            return Err(Error::InvalidGraph("feature rows must be one per node and equal length".into()));
        }
        if edge_probs.len() != n || edge_probs.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidGraph("edge_probs must be n x n".into()));
        }
        let mut g = Self::empty(n, feature_dim);
        for i in 0..n {
            g.locations[i] = locations[i];
            g.features[i * feature_dim..(i + 1) * feature_dim].copy_from_slice(&features[i]);
            for j in 0..n {
                g.distances[i * N_MAX + j] = euclid(locations[i], locations[j]);
                g.edge_probs[i * N_MAX + j] = edge_probs[i][j];
            }
        }
        if let Some(adj) = gt_adjacency {
            if adj.len() != n || adj.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidGraph("gt_adjacency must be n x n".into()));
            }
            let mut a = vec![false; N_MAX * N_MAX];
            for i in 0..n {
                for j in 0..n {
                    a[i * N_MAX + j] = adj[i][j];
                }
            }
            g.gt_adjacency = Some(a);
        }
        Ok(g)
    }

    /// All-zero graph with the first `n` nodes marked valid.
    pub fn empty(n: usize, feature_dim: usize) -> Self {
        Self {
            n_nodes: n,
            locations: vec![[0.0, 0.0]; N_MAX],
            distances: vec![0.0; N_MAX * N_MAX],
            edge_probs: vec![0.0; N_MAX * N_MAX],
            feature_dim,
            features: vec![0.0; N_MAX * feature_dim],
            gt_adjacency: None,
            valid_mask: (0..N_MAX).map(|i| i < n).collect(),
        }
    }

    pub fn valid_nodes(&self) -> Vec<usize> {
        (0..N_MAX).filter(|&i| self.valid_mask.get(i).copied().unwrap_or(false)).collect()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        i < N_MAX && self.valid_mask.get(i).copied().unwrap_or(false)
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.distances[i * N_MAX + j]
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.edge_probs[i * N_MAX + j]
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn gt_adjacent(&self, i: usize, j: usize) -> Option<bool> {
        self.gt_adjacency.as_ref().map(|a| a[i * N_MAX + j])
    }

    /// Ground-truth adjacency as an `N_MAX x N_MAX` mask.
    pub fn gt_mask(&self) -> Result<&[bool]> {
        self.gt_adjacency.as_deref().ok_or(Error::MissingGroundTruth)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), N_MAX, "permutation must cover the full capacity");
        let k = self.feature_dim;
        let mut g = self.clone();
        for i in 0..N_MAX {
            let pi = perm[i];
            g.locations[pi] = self.locations[i];
            g.valid_mask[pi] = self.valid_mask[i];
            g.features[pi * k..(pi + 1) * k].copy_from_slice(self.feature_row(i));
            for j in 0..N_MAX {
                let pj = perm[j];
                g.distances[pi * N_MAX + pj] = self.dist(i, j);
                g.edge_probs[pi * N_MAX + pj] = self.prob(i, j);
                if let (Some(dst), Some(src)) = (&mut g.gt_adjacency, &self.gt_adjacency) {
                    dst[pi * N_MAX + pj] = src[i * N_MAX + j];
                }
            }
        }
        g
    }
}

pub(crate) fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Lists every broken invariant; an empty list means the graph is sound.
pub fn validate_graph(g: &TopoGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let nn = N_MAX * N_MAX;
    for (field, found, expected) in [
        ("locations", g.locations.len(), N_MAX),
        ("distances", g.distances.len(), nn),
        ("edge_probs", g.edge_probs.len(), nn),
        ("features", g.features.len(), N_MAX * g.feature_dim),
        ("valid_mask", g.valid_mask.len(), N_MAX),
    ] {
        if found != expected {
            out.push(Violation::Shape { field, expected, found });
        }
    }
    if let Some(a) = &g.gt_adjacency {
        if a.len() != nn {
            out.push(Violation::Shape { field: "gt_adjacency", expected: nn, found: a.len() });
        }
    }
    if !out.is_empty() {
        return out;
    }
    let count = g.valid_mask.iter().filter(|&&v| v).count();
    if count != g.n_nodes {
        out.push(Violation::MaskCount { expected: g.n_nodes, found: count });
    }

    let valid = |i: usize| g.valid_mask[i];
    for i in 0..N_MAX {
        if g.prob(i, i) != 0.0 {
            out.push(Violation::NonzeroDiagonal { matrix: "edge_probs", i });
        }
        if g.dist(i, i) != 0.0 {
            out.push(Violation::NonzeroDiagonal { matrix: "distances", i });
        }
        if g.gt_adjacent(i, i) == Some(true) {
            out.push(Violation::NonzeroDiagonal { matrix: "gt_adjacency", i });
        }
        for j in 0..N_MAX {
            let padded = !valid(i) || !valid(j);
            let e = g.prob(i, j);
            let d = g.dist(i, j);
            if padded {
                if e != 0.0 {
                    out.push(Violation::PaddingNonzero { field: "edge_probs", i, j });
                }
                if d != 0.0 {
                    out.push(Violation::PaddingNonzero { field: "distances", i, j });
                }
                if g.gt_adjacent(i, j) == Some(true) {
                    out.push(Violation::PaddingNonzero { field: "gt_adjacency", i, j });
                }
                continue;
            }
            if !(0.0..=1.0).contains(&e) {
                out.push(Violation::OutOfRange { matrix: "edge_probs", i, j, value: e });
            }
            if !(d >= 0.0 && d.is_finite()) {
                out.push(Violation::OutOfRange { matrix: "distances", i, j, value: d });
            }
            if j > i {
                if e != g.prob(j, i) {
                    out.push(Violation::Asymmetric { matrix: "edge_probs", i, j });
                }
                if d != g.dist(j, i) {
                    out.push(Violation::Asymmetric { matrix: "distances", i, j });
                }
                if g.gt_adjacent(i, j) != g.gt_adjacent(j, i) {
                    out.push(Violation::Asymmetric { matrix: "gt_adjacency", i, j });
                }
            }
        }
        if !valid(i) {
            if g.locations[i] != [0.0, 0.0] {
                out.push(Violation::PaddingNonzero { field: "locations", i, j: 0 });
            }
            if g.feature_row(i).iter().any(|&v| v != 0.0) {
                out.push(Violation::PaddingNonzero { field: "features", i, j: 0 });
            }
        }
    }
    let nodes = g.valid_nodes();
    for &i in &nodes {
        for &j in &nodes {
            for &k in &nodes {
                if g.dist(i, k) > g.dist(i, j) + g.dist(j, k) + TRIANGLE_TOL {
                    out.push(Violation::Triangle { i, j, k });
                }
            }
        }
    }
    out
}

/// Assembles the network input for node `i` given the current target.
pub fn build_embedding(g: &TopoGraph, i: usize, target: usize, mode: GtChannelMode) -> Result<NodeEmbedding> {
    if !g.is_valid(i) {
        return Err(Error::InvalidNode(i));
    }
    if !g.is_valid(target) {
        return Err(Error::InvalidNode(target));
    }
    let gt = match mode {
        GtChannelMode::ProbsOnly => None,
        GtChannelMode::GtOnly | GtChannelMode::Both => {
            GT_CHANNEL_READS.with(|c| c.set(c.get() + 1));
            Some(g.gt_mask()?)
        }
    };
    let mut edge_row = vec![0.0; 2 * N_MAX];
    if mode != GtChannelMode::GtOnly {
        edge_row[..N_MAX].copy_from_slice(&g.edge_probs[i * N_MAX..(i + 1) * N_MAX]);
    }
    if let Some(a) = gt {
        for j in 0..N_MAX {
            edge_row[N_MAX + j] = if a[i * N_MAX + j] { 1.0 } else { 0.0 };
        }
    }
    let mut one_hot = vec![0.0; N_MAX];
    one_hot[i] = 1.0;
    Ok(NodeEmbedding {
        visual: g.feature_row(i).to_vec(),
        edge_row,
        is_target: if i == target { 1.0 } else { 0.0 },
        dist_row: g.distances[i * N_MAX..(i + 1) * N_MAX].to_vec(),
        one_hot,
    })
}

/// Valid node closest to `p`; ties go to the lowest index.
pub fn nearest_node(g: &TopoGraph, p: [f64; 2]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in g.valid_nodes() {
        let d = euclid(g.locations[i], p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyGraph)
}

/// Valid node whose feature row has the highest cosine similarity with
/// `query`; ties go to the lowest index.
pub fn localize_target(g: &TopoGraph, query: &[f64]) -> Result<usize> {
    if query.len() != g.feature_dim {
        return Err(Error::InvalidGraph(format!(
            "query has {} features, graph has {}",
            query.len(),
            g.feature_dim
        )));
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(Error::ZeroNorm("query".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for i in g.valid_nodes() {
        let row = g.feature_row(i);
        let rn = norm(row);
        if rn == 0.0 {
            return Err(Error::ZeroNorm(format!("feature row {i}")));
        }
        let cos = row.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (rn * qn);
        if best.is_none_or(|(_, bc)| cos > bc) {
            best = Some((i, cos));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyGraph)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
