//! Batch entry points for the `topoplan` binary.
//!
//! Every command writes its outputs plus a `run_manifest.json` under the
//! output directory. Errors carry a [`Failure`] class that decides the exit
//! code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Error classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

/// Exit code for any error coming out of a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.exit_code();
        }
        if let Some(topoplan::Error::Config(_)) = cause.downcast_ref::<topoplan::Error>() {
            return 1;
        }
    }
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: config::sha256_hex(&bytes),
        })
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub metrics: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(name.into(), FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.outputs.insert(name.into(), FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<PathBuf> {
        let path = out.join("run_manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Makes `path` absolute against the current directory.
pub fn absolute(path: &Path) -> anyhow::Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Failure::Usage(format!("bad path {}: {e}", path.display())).into())
}

/// Resolves an input directory, failing with a data error when it is absent.
pub fn existing_dir(path: &Path, what: &str) -> anyhow::Result<PathBuf> {
    let p = absolute(path)?;
    if !p.is_dir() {
        return Err(Failure::Data(format!("{what} directory {} does not exist", p.display())).into());
    }
    Ok(p)
}

pub fn existing_file(path: &Path, what: &str) -> anyhow::Result<PathBuf> {
    let p = absolute(path)?;
    if !p.is_file() {
        return Err(Failure::Data(format!("{what} {} does not exist", p.display())).into());
    }
    Ok(p)
}

/// Creates the output directory and returns its absolute form.
pub fn prepare_out(out: &Path) -> anyhow::Result<PathBuf> {
    let p = absolute(out)?;
    std::fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
    Ok(p)
}
