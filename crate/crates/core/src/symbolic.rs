//! Exact shortest paths, the symbolic baselines for uncertain graphs,
//! ground-truth next-hop labels, and graph-space metrics.
//!
//! Adjacency masks are `N_MAX x N_MAX` row-major booleans. Edge weights are
//! the graph's distances unless stated otherwise. Ties resolve to the
//! lowest node index everywhere.

use crate::graph::{TopoGraph, N_MAX};
use crate::{Error, Result};

/// Relative slack used when deciding that two path lengths are equal.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DistTable {
    /// Shortest known distance from the source; `INFINITY` if unreached.
    pub bounds: Vec<f64>,
    /// Previous node on the best known path, `-1` at the source and at
    /// unreached nodes.
    pub predecessor: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub nodes: Vec<usize>,
    /// Metric length of `nodes`.
    pub total_dist: f64,
    pub reached: bool,
    pub predecessor: Vec<i64>,
}

impl DistTable {
    fn init(g: &TopoGraph, source: usize) -> Result<Self> {
        if !g.is_valid(source) {
            return Err(Error::InvalidNode(source));
        }
        let mut bounds = vec![f64::INFINITY; N_MAX];
        bounds[source] = 0.0;
        Ok(Self {
            bounds,
            predecessor: vec![-1; N_MAX],
        })
    }

    /// Walks predecessors back from `target`.
    pub fn path_to(&self, g: &TopoGraph, source: usize, target: usize) -> PathResult {
        let mut result = PathResult {
            nodes: Vec::new(),
            total_dist: 0.0,
            reached: false,
            predecessor: self.predecessor.clone(),
        };
        if !g.is_valid(target) || !self.bounds[target].is_finite() {
            result.nodes.push(source);
            return result;
        }
        let mut nodes = vec![target];
        let mut cur = target;
        while cur != source {
            let p = self.predecessor[cur];
            if p < 0 || nodes.len() > N_MAX {
                result.nodes.push(source);
                return result;
            }
            cur = p as usize;
            nodes.push(cur);
        }
        nodes.reverse();
        result.total_dist = path_length(g, &nodes);
        result.nodes = nodes;
        result.reached = true;
        result
    }
}

pub fn path_length(g: &TopoGraph, nodes: &[usize]) -> f64 {
    nodes.windows(2).map(|w| g.dist(w[0], w[1])).sum()
}

fn edge(adj: &[bool], i: usize, j: usize) -> bool {
    i != j && adj[i * N_MAX + j]
}

/// Dijkstra over an arbitrary non-negative cost matrix restricted to `adj`.
fn dijkstra_costs(g: &TopoGraph, adj: &[bool], cost: impl Fn(usize, usize) -> f64, source: usize) -> Result<DistTable> {
    assert_eq!(adj.len(), N_MAX * N_MAX, "adjacency must be N_MAX x N_MAX");
    let mut t = DistTable::init(g, source)?;
    let valid = g.valid_nodes();
    let mut done = [false; N_MAX];
    loop {
        let mut u = None;
        for &i in &valid {
            if !done[i] && t.bounds[i].is_finite() && u.is_none_or(|u: usize| t.bounds[i] < t.bounds[u]) {
                u = Some(i);
            }
        }
        let Some(u) = u else { break };
        done[u] = true;
        for &v in &valid {
            if done[v] || !edge(adj, u, v) {
                continue;
            }
            let cand = t.bounds[u] + cost(u, v);
            if cand < t.bounds[v] {
                t.bounds[v] = cand;
                t.predecessor[v] = u as i64;
            }
        }
    }
    Ok(t)
}

pub fn dijkstra(g: &TopoGraph, adj: &[bool], source: usize) -> Result<DistTable> {
    dijkstra_costs(g, adj, |i, j| g.dist(i, j), source)
}

/// Sequential relaxation sweeps: within a round every valid node `i`, in
/// ascending order, takes `b_i = min(b_i, b_j + d_ij)` over its neighbours
/// `j` in ascending order, reading bounds already updated this round.
pub fn bellman_ford(g: &TopoGraph, adj: &[bool], source: usize, rounds: usize) -> Result<DistTable> {
    assert_eq!(adj.len(), N_MAX * N_MAX, "adjacency must be N_MAX x N_MAX");
    let mut t = DistTable::init(g, source)?;
    let valid = g.valid_nodes();
    for _ in 0..rounds {
        let mut changed = false;
        for &i in &valid {
            for &j in &valid {
                if !edge(adj, i, j) {
                    continue;
                }
                let cand = t.bounds[j] + g.dist(i, j);
                if cand < t.bounds[i] {
                    t.bounds[i] = cand;
                    t.predecessor[i] = j as i64;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(t)
}

/// Largest graph [`brute_force_shortest`] accepts.
pub const BRUTE_FORCE_MAX: usize = 10;

/// Exact optimum by enumerating every simple path. Test oracle.
pub fn brute_force_shortest(g: &TopoGraph, adj: &[bool], source: usize, target: usize) -> Result<PathResult> {
    if g.n_nodes > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge(g.n_nodes));
    }
    if !g.is_valid(source) {
        return Err(Error::InvalidNode(source));
    }
    if !g.is_valid(target) {
        return Err(Error::InvalidNode(target));
    }
    let valid = g.valid_nodes();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack = vec![source];
    let mut on_path = vec![false; N_MAX];
    on_path[source] = true;
    fn dfs(
        g: &TopoGraph,
        adj: &[bool],
        valid: &[usize],
        target: usize,
        stack: &mut Vec<usize>,
        on_path: &mut [bool],
        len: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let cur = *stack.last().unwrap();
        if cur == target {
            if best.as_ref().is_none_or(|(b, _)| len < *b) {
                *best = Some((len, stack.clone()));
            }
            return;
        }
        for &j in valid {
            if on_path[j] || !edge(adj, cur, j) {
                continue;
            }
            on_path[j] = true;
            stack.push(j);
            dfs(g, adj, valid, target, stack, on_path, len + g.dist(cur, j), best);
            stack.pop();
            on_path[j] = false;
        }
    }
    dfs(g, adj, &valid, target, &mut stack, &mut on_path, 0.0, &mut best);
    let mut predecessor = vec![-1; N_MAX];
    Ok(match best {
        Some((total_dist, nodes)) => {
            for w in nodes.windows(2) {
                predecessor[w[1]] = w[0] as i64;
            }
            PathResult {
                nodes,
                total_dist,
                reached: true,
                predecessor,
            }
        }
        None => PathResult {
            nodes: vec![source],
            total_dist: 0.0,
            reached: false,
            predecessor,
        },
    })
}

/// Ground-truth adjacency restricted to valid nodes.
pub fn gt_adjacency(g: &TopoGraph) -> Result<Vec<bool>> {
    Ok(g.gt_mask()?.to_vec())
}

/// Edges whose probability is at least `tau`.
pub fn threshold_adjacency(g: &TopoGraph, tau: f64) -> Vec<bool> {
    let mut adj = vec![false; N_MAX * N_MAX];
    for i in g.valid_nodes() {
        for j in g.valid_nodes() {
            adj[i * N_MAX + j] = i != j && g.prob(i, j) >= tau;
        }
    }
    adj
}

/// Dijkstra on the graph thresholded at `tau`.
pub fn threshold_plan(g: &TopoGraph, tau: f64, source: usize, target: usize) -> Result<PathResult> {
    let adj = threshold_adjacency(g, tau);
    Ok(dijkstra(g, &adj, source)?.path_to(g, source, target))
}

fn positive_prob_adjacency(g: &TopoGraph) -> Vec<bool> {
    let mut adj = vec![false; N_MAX * N_MAX];
    for i in g.valid_nodes() {
        for j in g.valid_nodes() {
            adj[i * N_MAX + j] = i != j && g.prob(i, j) > 0.0;
        }
    }
    adj
}

/// Edge cost `D_ij - lambda * ln(E_ij)`; zero-probability edges dropped.
pub fn custom_cost(g: &TopoGraph, lambda: f64, i: usize, j: usize) -> f64 {
    g.dist(i, j) - lambda * g.prob(i, j).ln()
}

/// Dijkstra on the blended distance/probability cost. The returned
/// `total_dist` is the metric length of the path, not its blended cost.
pub fn custom_cost_plan(g: &TopoGraph, lambda: f64, source: usize, target: usize) -> Result<PathResult> {
    let adj = positive_prob_adjacency(g);
    let t = dijkstra_costs(g, &adj, |i, j| custom_cost(g, lambda, i, j), source)?;
    Ok(t.path_to(g, source, target))
}

/// Next hop toward `target` for every node, derived from a shortest-path
/// tree rooted at `target`. `None` where the target is unreachable and at
/// padding; the target maps to itself.
fn next_hop_table(g: &TopoGraph, adj: &[bool], cost: impl Fn(usize, usize) -> f64, target: usize) -> Result<Vec<Option<usize>>> {
    let t = dijkstra_costs(g, adj, &cost, target)?;
    let mut table = vec![None; N_MAX];
    for i in g.valid_nodes() {
        if i == target {
            table[i] = Some(target);
            continue;
        }
        if !t.bounds[i].is_finite() {
            continue;
        }
        table[i] = lowest_optimal_hop(g, adj, &t.bounds, &cost, i);
    }
    Ok(table)
}

fn lowest_optimal_hop(
    g: &TopoGraph,
    adj: &[bool],
    bounds: &[f64],
    cost: impl Fn(usize, usize) -> f64,
    i: usize,
) -> Option<usize> {
    optimal_hops_from(g, adj, bounds, cost, i).into_iter().next()
}

fn optimal_hops_from(
    g: &TopoGraph,
    adj: &[bool],
    bounds: &[f64],
    cost: impl Fn(usize, usize) -> f64,
    i: usize,
) -> Vec<usize> {
    let bi = bounds[i];
    g.valid_nodes()
        .into_iter()
        .filter(|&j| edge(adj, i, j) && bounds[j].is_finite())
        .filter(|&j| bounds[j] + cost(i, j) <= bi + TIE_EPS * (1.0 + bi.abs()))
        .collect()
}

pub fn threshold_next_hops(g: &TopoGraph, tau: f64, target: usize) -> Result<Vec<Option<usize>>> {
    next_hop_table(g, &threshold_adjacency(g, tau), |i, j| g.dist(i, j), target)
}

pub fn custom_cost_next_hops(g: &TopoGraph, lambda: f64, target: usize) -> Result<Vec<Option<usize>>> {
    next_hop_table(g, &positive_prob_adjacency(g), |i, j| custom_cost(g, lambda, i, j), target)
}

pub fn gt_next_hops(g: &TopoGraph, target: usize) -> Result<Vec<Option<usize>>> {
    next_hop_table(g, g.gt_mask()?, |i, j| g.dist(i, j), target)
}

/// Ground-truth next hop per node toward `target`: the lowest-index
/// neighbour on some shortest path, `target` itself at the target, and `-1`
/// where the target is unreachable or the slot is padding.
pub fn gt_labels(g: &TopoGraph, target: usize) -> Result<Vec<i64>> {
    Ok(gt_next_hops(g, target)?
        .into_iter()
        .map(|h| h.map_or(-1, |h| h as i64))
        .collect())
}

/// Every optimal ground-truth first hop from each node toward `target`.
pub fn gt_optimal_hops(g: &TopoGraph, target: usize) -> Result<Vec<Vec<usize>>> {
    let adj = g.gt_mask()?;
    let t = dijkstra(g, adj, target)?;
    Ok((0..N_MAX)
        .map(|i| {
            if !g.is_valid(i) || i == target || !t.bounds[i].is_finite() {
                Vec::new()
            } else {
                optimal_hops_from(g, adj, &t.bounds, |a, b| g.dist(a, b), i)
            }
        })
        .collect())
}

/// Follows `planner(current)` from `source` toward `target`.
///
/// Stops on arrival, on a hop that is not a ground-truth edge (the hop is
/// not taken), or after `max_steps` hops.
pub fn rollout_graph_path(
    mut planner: impl FnMut(usize) -> Option<usize>,
    g: &TopoGraph,
    source: usize,
    target: usize,
    max_steps: usize,
) -> Result<PathResult> {
    let adj = g.gt_mask()?;
    if !g.is_valid(source) {
        return Err(Error::InvalidNode(source));
    }
    let mut nodes = vec![source];
    let mut predecessor = vec![-1; N_MAX];
    let mut cur = source;
    let mut steps = 0;
    while cur != target && steps < max_steps {
        let Some(next) = planner(cur) else { break };
        if !g.is_valid(next) || !edge(adj, cur, next) {
            break;
        }
        if predecessor[next] < 0 && next != source {
            predecessor[next] = cur as i64;
        }
        nodes.push(next);
        cur = next;
        steps += 1;
    }
    Ok(PathResult {
        total_dist: path_length(g, &nodes),
        reached: cur == target,
        nodes,
        predecessor,
    })
}

/// Default rollout budget in graph hops.
pub fn default_rollout_budget(g: &TopoGraph) -> usize {
    2 * g.n_nodes
}

/// One scored (source, target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub source: usize,
    pub target: usize,
    pub predicted_hop: Option<usize>,
    pub optimal_hops: Vec<usize>,
    /// Hop count of the canonical ground-truth shortest path.
    pub gt_hops: usize,
    pub reached: bool,
    pub achieved_dist: f64,
    pub optimal_dist: f64,
}

/// Fraction of pairs with at least `min_hops` ground-truth hops whose
/// predicted first hop is one of the optimal first hops.
pub fn accuracy_metric(pairs: &[PairOutcome], min_hops: usize) -> Result<f64> {
    let kept: Vec<_> = pairs.iter().filter(|p| p.gt_hops >= min_hops).collect();
    if kept.is_empty() {
        return Err(Error::NoPairs);
    }
    let correct = kept
        .iter()
        .filter(|p| p.predicted_hop.is_some_and(|h| p.optimal_hops.contains(&h)))
        .count();
    Ok(correct as f64 / kept.len() as f64)
}

/// Mean of `reached * optimal / max(optimal, achieved)`; 0 for no episodes.
pub fn hspl_metric(episodes: &[(bool, f64, f64)]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let total: f64 = episodes
        .iter()
        .map(|&(reached, achieved, optimal)| if reached { optimal / optimal.max(achieved) } else { 0.0 })
        .sum();
    total / episodes.len() as f64
}

/// H-SPL over pairs with at least `min_hops` ground-truth hops.
pub fn hspl_of_pairs(pairs: &[PairOutcome], min_hops: usize) -> f64 {
    let eps: Vec<_> = pairs
        .iter()
        .filter(|p| p.gt_hops >= min_hops)
        .map(|p| (p.reached, p.achieved_dist, p.optimal_dist))
        .collect();
    hspl_metric(&eps)
}

/// Scores a next-hop planner on every ordered pair of distinct, connected
/// valid nodes. `tables(target)` returns the planner's next hop per node.
pub fn evaluate_next_hop_planner(
    g: &TopoGraph,
    mut tables: impl FnMut(usize) -> Result<Vec<Option<usize>>>,
) -> Result<Vec<PairOutcome>> {
    let mut out = Vec::new();
    let budget = default_rollout_budget(g);
    for target in g.valid_nodes() {
        let gt = dijkstra(g, g.gt_mask()?, target)?;
        let labels = gt_labels(g, target)?;
        let optimal = gt_optimal_hops(g, target)?;
        let table = tables(target)?;
        for source in g.valid_nodes() {
            if source == target || !gt.bounds[source].is_finite() {
                continue;
            }
            let mut gt_hops = 0;
            let mut cur = source;
            while cur != target {
                cur = labels[cur] as usize;
                gt_hops += 1;
            }
            let roll = rollout_graph_path(|c| table[c], g, source, target, budget)?;
            out.push(PairOutcome {
                source,
                target,
                predicted_hop: table[source],
                optimal_hops: optimal[source].clone(),
                gt_hops,
                reached: roll.reached,
                achieved_dist: roll.total_dist,
                optimal_dist: gt.bounds[source],
            });
        }
    }
    Ok(out)
}
