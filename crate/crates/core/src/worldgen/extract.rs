use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{line_of_sight_cells, Cell, GridParams, OccupancyGrid};
use crate::graph::TopoGraph;
use crate::{Error, Result};

/// Which node [`most_redundant_node`] gives up when the budget is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redundancy {
    /// Lowest kernel sum, i.e. the most isolated node.
    #[default]
    Eq7Argmin,
    /// Highest kernel sum, i.e. the node with the most overlap.
    OverlapArgmax,
}

impl FromStr for Redundancy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq7_argmin" => Ok(Self::Eq7Argmin),
            "overlap_argmax" => Ok(Self::OverlapArgmax),
            _ => Err(Error::Config(format!("unknown redundancy rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub grid: GridParams,
    pub n_nodes: usize,
    /// Kernel bandwidth in meters.
    pub sigma: f64,
    /// Side of the square occupancy patch used as node features.
    pub patch_window: usize,
    /// Waypoints visited by the coverage walk (extended if too few nodes).
    pub walk_waypoints: usize,
    /// Cells walked between candidate nodes.
    pub walk_stride: usize,
    /// Candidates closer than this (meters) to a kept node are skipped.
    pub min_spacing: f64,
    pub redundancy: Redundancy,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            grid: GridParams::default(),
            n_nodes: 32,
            sigma: 0.8,
            patch_window: 11,
            walk_waypoints: 16,
            walk_stride: 8,
            min_spacing: 0.5,
            redundancy: Redundancy::Eq7Argmin,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_nodes < 2 || self.n_nodes > crate::N_MAX {
            return bad("n_nodes must be in 2..=32");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.patch_window == 0 || self.patch_window.is_multiple_of(2) {
            return bad("patch_window must be odd");
        }
        if self.walk_waypoints == 0 || self.walk_stride == 0 {
            return bad("walk lengths must be positive");
        }
        if !(self.min_spacing >= 0.0 && self.min_spacing.is_finite()) {
            return bad("min_spacing must be non-negative");
        }
        Ok(())
    }
}

fn kernel(a: [f64; 2], b: [f64; 2], sigma: f64) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Index chosen for replacement by the Gaussian kernel-sum criterion
/// `sum_j K(L_i, L_j)` (self term included). Ties go to the lowest index.
pub fn most_redundant_node(locations: &[[f64; 2]], sigma: f64, rule: Redundancy) -> Result<usize> {
    if locations.len() < 2 {
        return Err(Error::TooFewNodes {
            needed: 2,
            got: locations.len(),
        });
    }
    let sums: Vec<f64> = locations
        .iter()
        .map(|&a| locations.iter().map(|&b| kernel(a, b, sigma)).sum())
        .collect();
    let mut best = 0;
    for (i, &s) in sums.iter().enumerate().skip(1) {
        let better = match rule {
            Redundancy::Eq7Argmin => s < sums[best],
            Redundancy::OverlapArgmax => s > sums[best],
        };
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Flattened `window x window` patch around `cell`: 1 free, 0 blocked or
/// outside the grid. Row-major, top-left first.
pub fn node_features(grid: &OccupancyGrid, cell: Cell, window: usize) -> Result<Vec<f64>> {
    if !grid.is_free(cell) {
        return Err(Error::BlockedCell(cell.0, cell.1));
    }
    let half = (window / 2) as i64;
    let mut out = Vec::with_capacity(window * window);
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (cell.0 as i64 + dx, cell.1 as i64 + dy);
            let free = grid.in_bounds(x, y) && grid.is_free((x as usize, y as usize));
            out.push(if free { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// A graph extracted from a grid together with the cell of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedGraph {
    pub graph: TopoGraph,
    pub cells: Vec<Cell>,
}

/// Cells proposed as node candidates by a seeded coverage walk: random
/// free waypoints joined by grid A*, one candidate every `stride` cells.
/// Stops after `waypoints` legs once `enough` candidates are in.
fn coverage_walk(grid: &OccupancyGrid, params: &GenParams, rng: &mut ChaCha8Rng, enough: usize) -> Vec<Cell> {
    let free = grid.free_cells();
    let mut cur = free[rng.random_range(0..free.len())];
    let mut out = vec![cur];
    let mut since = 0;
    let max_legs = params.walk_waypoints * 10;
    for leg in 0..max_legs {
        if leg >= params.walk_waypoints && out.len() >= enough {
            break;
        }
        let goal = free[rng.random_range(0..free.len())];
        let Some(path) = grid.astar(cur, goal) else { continue };
        for &c in &path[1..] {
            since += 1;
            if since == params.walk_stride {
                out.push(c);
                since = 0;
            }
        }
        cur = goal;
    }
    out
}

/// Builds a ground-truth graph from a coverage walk over `grid`.
///
/// Edge probabilities are the 0/1 ground truth; see `corrupt_edges` for
/// the noisy channel.
pub fn extract_graph(grid: &OccupancyGrid, params: &GenParams, seed: u64) -> Result<ExtractedGraph> {
    params.validate()?;
    let k = params.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spacing rejections eat candidates, so ask the walk for a surplus.
    let candidates = coverage_walk(grid, params, &mut rng, 3 * k);
    let mut cells: Vec<Cell> = Vec::with_capacity(k);
    let mut locs: Vec<[f64; 2]> = Vec::with_capacity(k + 1);
    for c in candidates {
        let p = grid.cell_center(c);
        if locs.iter().any(|&q| crate::graph::euclid(p, q) < params.min_spacing) {
            continue;
        }
        if cells.len() < k {
            cells.push(c);
            locs.push(p);
            continue;
        }
        locs.push(p);
        let r = most_redundant_node(&locs, params.sigma, params.redundancy)?;
        locs.swap_remove(r);
        if r < k {
            cells[r] = c;
        }
    }
    if cells.len() < k {
        return Err(Error::Generation(format!(
            "coverage walk placed {} of {k} nodes",
            cells.len()
        )));
    }
    let extracted = graph_from_cells(grid, &cells, params.patch_window)?;
    // A map whose ground truth cannot route between two nodes is useless for
    // navigation, so such layouts count as failed generations.
    if !gt_connected(&extracted.graph) {
        return Err(Error::Generation("ground-truth graph is disconnected".into()));
    }
    Ok(extracted)
}

fn gt_connected(g: &TopoGraph) -> bool {
    let Ok(mask) = g.gt_mask() else { return false };
    let mut seen = vec![false; g.n_nodes];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..g.n_nodes {
            if mask[i * crate::N_MAX + j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Ground-truth graph on the given node cells.
pub fn graph_from_cells(grid: &OccupancyGrid, cells: &[Cell], window: usize) -> Result<ExtractedGraph> {
    let n = cells.len();
    let locs: Vec<[f64; 2]> = cells.iter().map(|&c| grid.cell_center(c)).collect();
    let feats = cells
        .iter()
        .map(|&c| node_features(grid, c, window))
        .collect::<Result<Vec<_>>>()?;
    let mut adj = vec![vec![false; n]; n];
    let mut probs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = line_of_sight_cells(grid, cells[i], cells[j])?;
            adj[i][j] = v;
            adj[j][i] = v;
            probs[i][j] = f64::from(u8::from(v));
            probs[j][i] = probs[i][j];
        }
    }
    let graph = TopoGraph::from_locations(&locs, &probs, &feats, Some(&adj))?;
    Ok(ExtractedGraph {
        graph,
        cells: cells.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_graph;
    use crate::worldgen::generate_grid;
    use crate::N_MAX;

    fn kernel_sums(locs: &[[f64; 2]], sigma: f64) -> Vec<f64> {
        // Written out independently of the production loop.
        let mut s = vec![0.0; locs.len()];
        for i in 0..locs.len() {
            for j in 0..locs.len() {
                let dx = locs[i][0] - locs[j][0];
                let dy = locs[i][1] - locs[j][1];
                s[i] += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
        s
    }

    #[test]
    fn kernel_criterion_picks_isolated_or_crowded_node() {
        let locs = [[0.0, 0.0], [0.3, 0.0], [4.0, 0.0]];
        let s = kernel_sums(&locs, 0.8);
        assert!(s[2] < s[0] && s[2] < s[1]);
        assert_eq!(most_redundant_node(&locs, 0.8, Redundancy::Eq7Argmin).unwrap(), 2);
        // Node 1 sits slightly closer to the far node, so it overlaps most.
        assert!(s[1] > s[0]);
        assert_eq!(most_redundant_node(&locs, 0.8, Redundancy::OverlapArgmax).unwrap(), 1);

        let locs = [[1.0, 1.0], [1.0, 1.0], [3.0, 1.0]];
        let kd = (-4.0f64 / (2.0 * 0.64)).exp();
        let s = kernel_sums(&locs, 0.8);
        assert!((s[0] - (2.0 + kd)).abs() < 1e-15);
        assert!((s[2] - (1.0 + 2.0 * kd)).abs() < 1e-15);
        assert_eq!(most_redundant_node(&locs, 0.8, Redundancy::Eq7Argmin).unwrap(), 2);

        assert_eq!(most_redundant_node(&[[2.0, 2.0]; 5], 0.8, Redundancy::Eq7Argmin).unwrap(), 0);
        assert!(most_redundant_node(&[[0.0, 0.0]], 0.8, Redundancy::Eq7Argmin).is_err());
    }

    fn open_room(w: usize, h: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new_blocked(w, h, 0.1);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                g.set((x, y), true);
            }
        }
        g
    }

    #[test]
    fn patch_marks_walls_and_margin() {
        let g = open_room(30, 30);
        let f = node_features(&g, (15, 15), 11).unwrap();
        assert_eq!(f.len(), 121);
        assert!(f.iter().all(|&v| v == 1.0));
        // Next to the left wall: column 0 of the grid lands at patch column 4.
        let f = node_features(&g, (1, 15), 11).unwrap();
        for row in 0..11 {
            for col in 0..11 {
                let expect = if col <= 4 { 0.0 } else { 1.0 };
                assert_eq!(f[row * 11 + col], expect, "({row},{col})");
            }
        }
        assert!(node_features(&g, (0, 0), 11).is_err());
    }

    #[test]
    fn patches_of_corridor_nodes_agree_on_overlap() {
        let mut g = OccupancyGrid::new_blocked(40, 9, 0.1);
        for x in 1..39 {
            for y in 3..6 {
                g.set((x, y), true);
            }
        }
        let (a, b) = ((10, 4), (14, 4));
        let (fa, fb) = (node_features(&g, a, 11).unwrap(), node_features(&g, b, 11).unwrap());
        // Shared grid columns 9..=15 appear shifted by 4 patch columns.
        for row in 0..11 {
            for col in 4..11 {
                assert_eq!(fa[row * 11 + col], fb[row * 11 + col - 4]);
            }
        }
        let ex = graph_from_cells(&g, &[a, b], 11).unwrap();
        assert_eq!(ex.graph.gt_adjacent(0, 1), Some(true));
    }

    #[test]
    fn open_room_graph_is_complete() {
        let g = open_room(30, 30);
        let params = GenParams {
            n_nodes: 4,
            walk_waypoints: 4,
            walk_stride: 5,
            ..GenParams::default()
        };
        let ex = extract_graph(&g, &params, 1).unwrap();
        assert_eq!(ex.graph.n_nodes, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(ex.graph.gt_adjacent(i, j), Some(i != j));
            }
        }
    }

    #[test]
    fn two_rooms_only_see_each_other_through_the_corridor() {
        // Rooms x in 1..10 and 20..29, joined by a corridor in rows 9..11.
        let mut g = OccupancyGrid::new_blocked(30, 20, 0.1);
        for y in 1..19 {
            for x in (1..10).chain(20..29) {
                g.set((x, y), true);
            }
        }
        for y in 9..11 {
            for x in 10..20 {
                g.set((x, y), true);
            }
        }
        let cells = [(2, 2), (8, 16), (25, 3), (27, 17), (5, 10), (24, 9)];
        let ex = graph_from_cells(&g, &cells, 11).unwrap();
        for i in 0..cells.len() {
            for j in 0..cells.len() {
                if i == j {
                    continue;
                }
                let expect = line_of_sight_cells(&g, cells[i], cells[j]).unwrap();
                assert_eq!(ex.graph.gt_adjacent(i, j), Some(expect));
            }
        }
        assert_eq!(ex.graph.gt_adjacent(0, 2), Some(false));
        assert_eq!(ex.graph.gt_adjacent(1, 3), Some(false));
        assert_eq!(ex.graph.gt_adjacent(4, 5), Some(true));
    }

    #[test]
    fn rooms_without_corridor_nodes_are_disconnected() {
        let mut g = OccupancyGrid::new_blocked(30, 20, 0.1);
        for y in 1..19 {
            for x in (1..10).chain(20..29) {
                g.set((x, y), true);
            }
        }
        for y in 9..11 {
            for x in 10..20 {
                g.set((x, y), true);
            }
        }
        let split = graph_from_cells(&g, &[(2, 2), (8, 16), (25, 3), (27, 17)], 11).unwrap();
        assert!(!gt_connected(&split.graph));
        let joined = graph_from_cells(&g, &[(2, 2), (8, 16), (25, 3), (27, 17), (5, 10), (24, 9)], 11).unwrap();
        assert!(gt_connected(&joined.graph));
    }

    #[test]
    fn extracted_graphs_are_connected_or_rejected() {
        let params = GenParams::default();
        let mut rejected = 0;
        for seed in 0..30 {
            let grid = generate_grid(&params.grid, seed).unwrap();
            match extract_graph(&grid, &params, seed) {
                Ok(ex) => assert!(gt_connected(&ex.graph)),
                Err(Error::Generation(_)) => rejected += 1,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(rejected < 15, "{rejected} of 30 rejected");
    }

    #[test]
    fn generated_graphs_are_valid_and_consistent() {
        let params = GenParams::default();
        for seed in 0..10 {
            let grid = generate_grid(&params.grid, seed).unwrap();
            let Ok(ex) = extract_graph(&grid, &params, seed) else { continue };
            let g = &ex.graph;
            assert_eq!(g.n_nodes, 32);
            assert_eq!(g.feature_dim, 121);
            assert!(validate_graph(g).is_empty(), "{:?}", validate_graph(g));
            for i in 0..32 {
                assert!(grid.is_free(ex.cells[i]));
                assert_eq!(grid.cell_of(g.locations[i]), Some(ex.cells[i]));
                for j in 0..32 {
                    let los = i != j && line_of_sight_cells(&grid, ex.cells[i], ex.cells[j]).unwrap();
                    assert_eq!(g.gt_adjacent(i, j), Some(los));
                }
            }
            assert!(g.valid_mask[32..N_MAX].iter().all(|&v| !v));
        }
    }
}
