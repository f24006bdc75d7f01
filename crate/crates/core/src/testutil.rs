//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::TopoGraph;

/// Random `n`-node graph: uniform locations in a 10 m square, uniform
/// edge probabilities, ground truth `p > 0.5`.
pub(crate) fn random_graph(n: usize, k: usize, seed: u64) -> TopoGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let mut probs = vec![vec![0.0; n]; n];
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p: f64 = rng.random();
            probs[i][j] = p;
            probs[j][i] = p;
            adj[i][j] = p > 0.5;
            adj[j][i] = p > 0.5;
        }
    }
    let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    TopoGraph::from_locations(&locs, &probs, &feats, Some(&adj)).unwrap()
}

