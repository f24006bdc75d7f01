use std::path::Path;

use serde_json::json;
use topoplan::planner::{gradcheck, GradcheckConfig, GradcheckReport};

use crate::{Failure, RunConfig, RunManifest};

pub struct GradcheckArgs {
    pub configurations: usize,
    pub perturb_backward: bool,
}

/// Runs the finite-difference suite. A failing suite still writes its
/// report before returning a check failure.
pub fn run(cfg: &RunConfig, args: &GradcheckArgs, out: &Path) -> anyhow::Result<GradcheckReport> {
    let gc = GradcheckConfig {
        configurations: args.configurations,
        seed: cfg.seed,
        fault: args.perturb_backward,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&gc)?;
    let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    w.write_record(["configuration", "max_rel_error", "worst_param", "worst_index", "checked", "passed"])?;
    for r in &report.results {
        w.write_record([
            r.configuration.to_string(),
            super::exact(r.max_rel_error),
            r.worst_param.clone(),
            r.worst_index.to_string(),
            r.checked.to_string(),
            r.passed.to_string(),
        ])?;
        println!(
            "config {:>2}  max rel err {:.3e}  ({} [{}])  {}",
            r.configuration,
            r.max_rel_error,
            r.worst_param,
            r.worst_index,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    w.flush()?;
    let mut run = RunManifest::new("gradcheck", cfg);
    run.output("report", &out.join("gradcheck.csv"))?;
    run.metrics = json!({
        "passed": report.passed,
        "configurations": report.results.len(),
        "perturb_backward": args.perturb_backward,
        "max_rel_error": report.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
    });
    run.write(out)?;
    if !report.passed {
        let bad = report.results.iter().filter(|r| !r.passed).count();
        return Err(Failure::Check(format!("{bad} of {} configurations failed", report.results.len())).into());
    }
    println!("gradient check passed");
    Ok(report)
}
