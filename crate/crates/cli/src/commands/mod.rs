//! One module per subcommand. Each `run` takes a resolved [`RunConfig`],
//! the command's own arguments and an absolute output directory.

pub mod eval_hierarchical;
pub mod eval_planner;
pub mod gen_data;
pub mod gradcheck;
pub mod train;

use std::path::Path;

use topoplan::worldgen::{load_split, DatasetManifest, LoadedGraph, Split};

use crate::Failure;

pub fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Failure::Usage(format!("unknown split {other:?}")).into()),
    }
}

pub fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Reads a split, keeping at most `cap` graphs (0 keeps all).
pub fn load_graphs(data: &Path, split: Split, cap: usize) -> anyhow::Result<Vec<LoadedGraph>> {
    DatasetManifest::load(data).map_err(|e| Failure::Data(format!("dataset manifest in {}: {e}", data.display())))?;
    let mut graphs =
        load_split(data, split).map_err(|e| Failure::Data(format!("{} split in {}: {e}", split_name(split), data.display())))?;
    if cap > 0 {
        graphs.truncate(cap);
    }
    Ok(graphs)
}

pub fn data_err(e: impl std::fmt::Display) -> anyhow::Error {
    Failure::Data(e.to_string()).into()
}

/// `f64` rendered so that parsing it back gives the same bits.
pub fn exact(x: f64) -> String {
    format!("{x:?}")
}
