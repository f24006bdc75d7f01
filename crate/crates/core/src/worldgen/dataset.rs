use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::extract::{extract_graph, GenParams};
use super::grid::{generate_grid, GridFile, OccupancyGrid};
use super::noise::{apply_noise, NoiseModel};
use crate::graph::{GraphRecord, TopoGraph};
use crate::io_util::write_atomic;
use crate::symbolic::gt_labels;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub split: Split,
    pub file: String,
    pub env_seeds: Vec<u64>,
    /// Ordered (source, target) pairs at least two ground-truth hops apart.
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split_seed: u64,
    pub gen: GenParams,
    pub noise: NoiseModel,
    pub splits: Vec<SplitEntry>,
}

impl DatasetManifest {
    pub fn entry(&self, split: Split) -> Option<&SplitEntry> {
        self.splits.iter().find(|e| e.split == split)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported format_version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(dir.join("manifest.json"))?)
    }
}

/// Split sizes for `n` environments: 2/11 held out for test, and a tenth
/// of the rest (rounded down) for validation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (n * 2 + 5) / 11;
    let rest = n - test;
    let val = rest / 10;
    (rest - val, val, test)
}

/// Ordered (source, target) pairs whose ground-truth path has at least two
/// hops.
pub fn instance_pairs(g: &TopoGraph) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for t in g.valid_nodes() {
        let labels = gt_labels(g, t)?;
        for s in g.valid_nodes() {
            if s == t || labels[s] < 0 {
                continue;
            }
            if labels[s] as usize != t {
                out.push((s, t));
            }
        }
    }
    Ok(out)
}

/// One generated environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub env_seed: u64,
    pub grid: OccupancyGrid,
    pub graph: TopoGraph,
}

/// Grid, graph and noisy edges for one environment seed.
pub fn generate_environment(params: &GenParams, noise: &NoiseModel, env_seed: u64) -> Result<Environment> {
    let grid = generate_grid(&params.grid, env_seed)?;
    let mut graph = extract_graph(&grid, params, env_seed ^ 0x5eed_0001)?.graph;
    apply_noise(&mut graph, noise, env_seed ^ 0x5eed_0002)?;
    Ok(Environment { env_seed, grid, graph })
}

pub fn grid_ref(env_seed: u64) -> String {
    format!("grids/env_{env_seed}.json")
}

/// Generates `n_graphs` environments under `out` and splits them by
/// environment seed. Environment seeds count up from `params.seed`;
/// seeds whose generation fails are skipped.
pub fn make_dataset(
    out: &Path,
    n_graphs: usize,
    params: &GenParams,
    noise: &NoiseModel,
    split_seed: u64,
) -> Result<DatasetManifest> {
    params.validate()?;
    noise.validate()?;
    if n_graphs == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut envs = Vec::with_capacity(n_graphs);
    let mut seed = params.seed;
    let max_seed = params.seed.saturating_add(4 * n_graphs as u64 + 16);
    while envs.len() < n_graphs {
        if seed >= max_seed {
            return Err(Error::Generation(format!(
                "only {} of {n_graphs} environments generated",
                envs.len()
            )));
        }
        match generate_environment(params, noise, seed) {
            Ok(env) => envs.push(env),
            Err(Error::Generation(_)) => {}
            Err(e) => return Err(e),
        }
        seed += 1;
    }

    let mut order: Vec<usize> = (0..n_graphs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let (n_train, n_val, _) = split_sizes(n_graphs);
    let mut splits = Vec::new();
    for split in Split::ALL {
        let range = match split {
            Split::Train => 0..n_train,
            Split::Val => n_train..n_train + n_val,
            Split::Test => n_train + n_val..n_graphs,
        };
        let mut members: Vec<usize> = order[range].to_vec();
        members.sort_unstable();
        let mut lines = String::new();
        let mut instances = 0;
        let mut env_seeds = Vec::new();
        for &m in &members {
            let env = &envs[m];
            let gref = grid_ref(env.env_seed);
            write_atomic(&out.join(&gref), GridFile::from_grid(&env.grid).to_text().as_bytes())?;
            let record = GraphRecord::from_graph(&env.graph, env.env_seed, gref);
            // Count on the stored (rounded) graph, which is what readers see.
            instances += instance_pairs(&record.to_graph()?)?.len();
            lines.push_str(&record.to_line());
            lines.push('\n');
            env_seeds.push(env.env_seed);
        }
        write_atomic(&out.join(split.file_name()), lines.as_bytes())?;
        splits.push(SplitEntry {
            split,
            file: split.file_name().into(),
            env_seeds,
            instances,
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        split_seed,
        gen: *params,
        noise: *noise,
        splits,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is always serializable");
    write_atomic(&out.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// A graph read back from a dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedGraph {
    pub env_seed: u64,
    pub grid_ref: String,
    pub graph: TopoGraph,
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LoadedGraph>> {
    let text = std::fs::read_to_string(dir.join(split.file_name()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r = GraphRecord::parse_line(l)?;
            Ok(LoadedGraph {
                env_seed: r.env_seed,
                graph: r.to_graph()?,
                grid_ref: r.grid_ref,
            })
        })
        .collect()
}

pub fn load_grid(dir: &Path, grid_ref: &str) -> Result<OccupancyGrid> {
    let path: PathBuf = dir.join(grid_ref);
    GridFile::parse(&std::fs::read_to_string(path)?)?.to_grid()
}
