//! Procedural worlds: rooms-and-corridors occupancy grids, line-of-sight
//! ground truth, coverage-walk graph extraction with kernel-based node
//! replacement, a parametric edge-noise model and dataset files.

mod dataset;
mod extract;
mod grid;
mod noise;

pub use dataset::{
    generate_environment, grid_ref, instance_pairs, load_grid, load_split, make_dataset, split_sizes,
    DatasetManifest, Environment, LoadedGraph, Split, SplitEntry, FORMAT_VERSION,
};
pub use extract::{
    extract_graph, graph_from_cells, most_redundant_node, node_features, ExtractedGraph, GenParams, Redundancy,
};
pub use grid::{
    generate_grid, line_of_sight, line_of_sight_cells, Cell, GridFile, GridParams, OccupancyGrid, GRID_RESOLUTION,
    MAX_GRID_SIDE,
};
pub use noise::{apply_noise, corrupt_edges, NoiseModel};
