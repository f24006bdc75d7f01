//! Planning on uncertain topological maps.
//!
//! The crate covers the whole pipeline: procedural occupancy-grid worlds and
//! graph extraction ([`worldgen`]), the shared graph model ([`graph`]),
//! exact and uncertainty-aware symbolic planners ([`symbolic`]), a small
//! reverse-mode autodiff engine ([`autodiff`]), the recurrent graph neural
//! planner and its training loop ([`planner`]), and the hierarchical
//! planner-plus-local-policy navigation loop ([`hierarchical`]).

pub mod autodiff;
mod error;
pub mod graph;
pub mod hierarchical;
pub(crate) mod io_util;
pub mod planner;
pub mod symbolic;
pub mod worldgen;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use graph::{gt_channel_reads, GtChannelMode, PlanningInstance, TopoGraph, N_MAX};
