//! Two-level navigation: a graph planner proposes waypoint nodes and a
//! scripted grid controller walks toward each one for at most `m` steps.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{localize_target, nearest_node, TopoGraph, N_MAX};
use crate::planner::{forward, predict_next, ActionMatrix, ForwardOptions, NeuralPlannerParams, PredictMode};
use crate::worldgen::{Cell, OccupancyGrid};
use crate::{Error, GtChannelMode, Result};

/// Episode step budget.
pub const DEFAULT_BUDGET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalPolicyConfig {
    /// Most grid steps per call.
    pub m: usize,
    /// Meters; a cell whose center is this close to the goal counts as
    /// arrived.
    pub stop_radius: f64,
}

impl Default for LocalPolicyConfig {
    fn default() -> Self {
        Self { m: 10, stop_radius: 0.3 }
    }
}

impl LocalPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("local policy needs m >= 1".into()));
        }
        if !(self.stop_radius >= 0.0 && self.stop_radius.is_finite()) {
            return Err(Error::Config("stop_radius must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub end: Cell,
    pub stopped: bool,
    pub steps: usize,
    /// Cells entered, excluding the start.
    pub path: Vec<Cell>,
}

fn within(grid: &OccupancyGrid, c: Cell, goal: [f64; 2], radius: f64) -> bool {
    let p = grid.cell_center(c);
    (p[0] - goal[0]).hypot(p[1] - goal[1]) <= radius + 1e-9
}

fn goal_cell(grid: &OccupancyGrid, goal: [f64; 2]) -> Result<Cell> {
    match grid.cell_of(goal) {
        Some(c) if grid.is_free(c) => Ok(c),
        Some(_) => grid.nearest_free_cell(goal).ok_or(Error::Generation("grid has no free cell".into())),
        None => Err(Error::Config(format!("goal {goal:?} is outside the grid"))),
    }
}

/// Walks the grid A* route toward the free cell nearest `goal` for at most
/// `config.m` unit steps, stopping once inside the stop radius (or at the
/// end of the route).
pub fn local_policy(grid: &OccupancyGrid, start: Cell, goal: [f64; 2], config: &LocalPolicyConfig) -> Result<LocalOutcome> {
    config.validate()?;
    if !grid.is_free(start) {
        return Err(Error::BlockedCell(start.0, start.1));
    }
    let target = goal_cell(grid, goal)?;
    let done = |c: Cell| within(grid, c, goal, config.stop_radius) || c == target;
    if done(start) {
        return Ok(LocalOutcome {
            end: start,
            stopped: true,
            steps: 0,
            path: Vec::new(),
        });
    }
    let route = grid.astar(start, target).unwrap_or_else(|| vec![start]);
    let mut path = Vec::new();
    for &c in route.iter().skip(1).take(config.m) {
        path.push(c);
        if done(c) {
            return Ok(LocalOutcome {
                end: c,
                stopped: true,
                steps: path.len(),
                path,
            });
        }
    }
    Ok(LocalOutcome {
        end: path.last().copied().unwrap_or(start),
        stopped: false,
        steps: path.len(),
        path,
    })
}

/// High-level planner interface: the next node to head for.
pub trait WaypointPlanner {
    fn propose(&mut self, g: &TopoGraph, current: usize, target: usize) -> Result<usize>;
}

/// Uniformly random valid node other than `current` (or `current` when it
/// is the only node).
pub fn random_planner<R: Rng + ?Sized>(g: &TopoGraph, current: usize, rng: &mut R) -> usize {
    let others: Vec<usize> = g.valid_nodes().into_iter().filter(|&i| i != current).collect();
    if others.is_empty() {
        current
    } else {
        others[rng.random_range(0..others.len())]
    }
}

pub struct RandomPlanner {
    rng: ChaCha8Rng,
}

impl RandomPlanner {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl WaypointPlanner for RandomPlanner {
    fn propose(&mut self, g: &TopoGraph, current: usize, _target: usize) -> Result<usize> {
        Ok(random_planner(g, current, &mut self.rng))
    }
}

/// Next-hop tables computed once per target, e.g. from a symbolic planner.
/// Nodes without a hop stay put.
pub struct TablePlanner<F> {
    tables: F,
    cache: HashMap<usize, Vec<Option<usize>>>,
}

impl<F: FnMut(&TopoGraph, usize) -> Result<Vec<Option<usize>>>> TablePlanner<F> {
    pub fn new(tables: F) -> Self {
        Self {
            tables,
            cache: HashMap::new(),
        }
    }
}

impl<F: FnMut(&TopoGraph, usize) -> Result<Vec<Option<usize>>>> WaypointPlanner for TablePlanner<F> {
    fn propose(&mut self, g: &TopoGraph, current: usize, target: usize) -> Result<usize> {
        if !self.cache.contains_key(&target) {
            let t = (self.tables)(g, target)?;
            self.cache.insert(target, t);
        }
        Ok(self.cache[&target][current].unwrap_or(current))
    }
}

/// The neural planner queried through its action matrix.
pub struct NeuralWaypointPlanner<'a> {
    params: &'a NeuralPlannerParams,
    mode: GtChannelMode,
    opts: ForwardOptions,
    predict: PredictMode,
    rng: ChaCha8Rng,
    cache: HashMap<usize, ActionMatrix>,
}

impl<'a> NeuralWaypointPlanner<'a> {
    pub fn new(
        params: &'a NeuralPlannerParams,
        mode: GtChannelMode,
        opts: ForwardOptions,
        predict: PredictMode,
        seed: u64,
    ) -> Self {
        Self {
            params,
            mode,
            opts,
            predict,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: HashMap::new(),
        }
    }
}

impl WaypointPlanner for NeuralWaypointPlanner<'_> {
    fn propose(&mut self, g: &TopoGraph, current: usize, target: usize) -> Result<usize> {
        if !self.cache.contains_key(&target) {
            let a = forward(self.params, g, target, self.mode, &self.opts)?;
            self.cache.insert(target, a);
        }
        Ok(predict_next(&self.cache[&target], current, self.predict, &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub agent_cell: Cell,
    pub current_node: usize,
    /// `None` on the closing entry.
    pub proposed_node: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub low_level_steps: usize,
    pub achieved_length: f64,
    pub geodesic_optimum: f64,
    pub target_node: usize,
    pub trace: Vec<TraceEntry>,
}

impl EpisodeResult {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("episode is always serializable")
    }
}

/// Grid distance in meters from `source` to the nearest free cell within
/// `radius` of `goal`.
pub fn geodesic_to_region(grid: &OccupancyGrid, source: Cell, goal: [f64; 2], radius: f64) -> Option<f64> {
    if !grid.is_free(source) {
        return None;
    }
    let mut dist = vec![usize::MAX; grid.width * grid.height];
    let mut q = VecDeque::new();
    dist[source.1 * grid.width + source.0] = 0;
    q.push_back(source);
    while let Some(c) = q.pop_front() {
        let d = dist[c.1 * grid.width + c.0];
        if within(grid, c, goal, radius) {
            return Some(d as f64 * grid.resolution());
        }
        let (x, y) = (c.0 as i64, c.1 as i64);
        for (a, b) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if grid.in_bounds(a, b) {
                let n = (a as usize, b as usize);
                let i = n.1 * grid.width + n.0;
                if grid.is_free(n) && dist[i] == usize::MAX {
                    dist[i] = d + 1;
                    q.push_back(n);
                }
            }
        }
    }
    None
}

/// Plans and walks from `source` until the agent is within the stop radius
/// of the localized target node or `budget` low-level steps are spent.
///
/// The agent starts localized at the node nearest to `source` and stays
/// localized at the last waypoint it reached. Re-localizing to the nearest
/// node halfway to a waypoint can hand the planner a node whose next hop
/// points back, and the agent then oscillates. A planning round in which
/// the local policy does not move costs one step so that a planner stuck
/// in place still exhausts the budget.
pub fn run_episode(
    grid: &OccupancyGrid,
    g: &TopoGraph,
    planner: &mut dyn WaypointPlanner,
    source: Cell,
    target_query: &[f64],
    budget: usize,
    config: &LocalPolicyConfig,
) -> Result<EpisodeResult> {
    config.validate()?;
    if !grid.is_free(source) {
        return Err(Error::BlockedCell(source.0, source.1));
    }
    let target = localize_target(g, target_query)?;
    let goal = g.locations[target];
    let optimum = geodesic_to_region(grid, source, goal, config.stop_radius)
        .ok_or_else(|| Error::Config("target is unreachable on the grid".into()))?;
    let mut agent = source;
    let mut steps = 0;
    let mut walked = 0usize;
    let mut trace = Vec::new();
    let mut success = within(grid, agent, goal, config.stop_radius);
    let mut current = nearest_node(g, grid.cell_center(source))?;
    while !success && steps < budget {
        let proposed = planner.propose(g, current, target)?;
        if !g.is_valid(proposed) || proposed >= N_MAX {
            return Err(Error::InvalidNode(proposed));
        }
        trace.push(TraceEntry {
            agent_cell: agent,
            current_node: current,
            proposed_node: Some(proposed),
        });
        let inner = LocalPolicyConfig {
            m: config.m.min(budget - steps),
            ..*config
        };
        // Every cell on the way is checked against the final goal too.
        let out = local_policy(grid, agent, g.locations[proposed], &inner)?;
        let mut moved = 0;
        for &c in &out.path {
            agent = c;
            moved += 1;
            if within(grid, agent, goal, config.stop_radius) {
                success = true;
                break;
            }
        }
        walked += moved;
        steps += moved.max(1);
        if out.stopped && moved == out.path.len() {
            current = proposed;
        }
    }
    let current = nearest_node(g, grid.cell_center(agent))?;
    trace.push(TraceEntry {
        agent_cell: agent,
        current_node: current,
        proposed_node: None,
    });
    Ok(EpisodeResult {
        success,
        low_level_steps: steps,
        // Unit 4-connected moves.
        achieved_length: walked as f64 * grid.resolution(),
        geodesic_optimum: optimum,
        target_node: target,
        trace,
    })
}

/// Mean of `success * optimum / max(optimum, achieved)`; 0 for no episodes.
pub fn spl_metric(episodes: &[EpisodeResult]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let total: f64 = episodes
        .iter()
        .map(|e| {
            if !e.success {
                0.0
            } else if e.geodesic_optimum <= 0.0 {
                1.0
            } else {
                e.geodesic_optimum / e.geodesic_optimum.max(e.achieved_length)
            }
        })
        .sum();
    total / episodes.len() as f64
}

/// One episode of an evaluation suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub source: Cell,
    /// Node whose features form the query (localization may pick another
    /// node with the same features).
    pub query_node: usize,
    pub query: Vec<f64>,
}

/// `count` episodes on one environment: a uniformly random query node and
/// a uniformly random free start cell at least `min_start` meters (grid
/// distance) from the localized target's stop region.
pub fn sample_episodes(
    grid: &OccupancyGrid,
    g: &TopoGraph,
    count: usize,
    seed: u64,
    config: &LocalPolicyConfig,
    min_start: f64,
) -> Result<Vec<EpisodeSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = grid.free_cells();
    let nodes = g.valid_nodes();
    if nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Generation("could not place episode starts".into()));
        }
        let q = nodes[rng.random_range(0..nodes.len())];
        let query = g.feature_row(q).to_vec();
        let target = localize_target(g, &query)?;
        let source = free[rng.random_range(0..free.len())];
        match geodesic_to_region(grid, source, g.locations[target], config.stop_radius) {
            Some(d) if d >= min_start => out.push(EpisodeSpec {
                source,
                query_node: q,
                query,
            }),
            _ => {}
        }
    }
    Ok(out)
}

/// Aggregate row for one planner over a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub planner: String,
    pub mode: String,
    pub m: usize,
    pub success_rate: f64,
    pub spl: f64,
    pub episodes: usize,
}

pub fn summarize(planner: &str, mode: &str, m: usize, results: &[EpisodeResult]) -> SuiteSummary {
    let n = results.len();
    let wins = results.iter().filter(|r| r.success).count();
    SuiteSummary {
        planner: planner.into(),
        mode: mode.into(),
        m,
        success_rate: if n == 0 { 0.0 } else { wins as f64 / n as f64 },
        spl: spl_metric(results),
        episodes: n,
    }
}
