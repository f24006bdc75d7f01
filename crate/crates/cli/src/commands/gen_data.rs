use std::path::Path;

use serde_json::json;
use topoplan::worldgen::{make_dataset, DatasetManifest};

use crate::{RunConfig, RunManifest};

/// Generates the dataset directly under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> anyhow::Result<DatasetManifest> {
    let manifest = make_dataset(out, cfg.data.n_graphs, &cfg.gen, &cfg.noise, cfg.seed)?;
    let mut run = RunManifest::new("gen-data", cfg);
    run.output("manifest", &out.join("manifest.json"))?;
    for e in &manifest.splits {
        run.output(&e.file, &out.join(&e.file))?;
        println!("{:<5} {:>5} graphs {:>7} instances", super::split_name(e.split), e.env_seeds.len(), e.instances);
    }
    let sha = run.outputs["manifest"].sha256.clone();
    println!("manifest sha256 {sha}");
    run.metrics = json!({
        "manifest_sha256": sha,
        "splits": manifest.splits.iter().map(|e| json!({
            "split": super::split_name(e.split),
            "graphs": e.env_seeds.len(),
            "instances": e.instances,
        })).collect::<Vec<_>>(),
    });
    run.write(out)?;
    Ok(manifest)
}
