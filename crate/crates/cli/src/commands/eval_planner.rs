use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use topoplan::planner::{evaluate_planner, NeuralPlannerParams};
use topoplan::symbolic::{
    accuracy_metric, custom_cost_next_hops, evaluate_next_hop_planner, gt_next_hops, hspl_of_pairs,
    threshold_next_hops, PairOutcome,
};
use topoplan::worldgen::Split;
use topoplan::{GtChannelMode, Result as CoreResult, TopoGraph};

use super::train::LoadedModel;
use super::{exact, load_graphs, split_name};
use crate::{RunConfig, RunManifest};

pub struct EvalPlannerArgs<'a> {
    pub data: &'a Path,
    pub split: Split,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_novis: Option<PathBuf>,
    pub checkpoint_gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    /// Sweep value, empty for methods without one.
    pub param: Option<f64>,
    pub accuracy: f64,
    pub hspl: f64,
    pub n_pairs: usize,
}

fn score(method: &str, param: Option<f64>, pairs: &[PairOutcome]) -> anyhow::Result<MetricRow> {
    Ok(MetricRow {
        method: method.into(),
        param,
        accuracy: accuracy_metric(pairs, 2)?,
        hspl: hspl_of_pairs(pairs, 2),
        n_pairs: pairs.iter().filter(|p| p.gt_hops >= 2).count(),
    })
}

/// Scores a symbolic next-hop rule on every graph.
pub fn symbolic_row(
    method: &str,
    param: Option<f64>,
    graphs: &[TopoGraph],
    mut tables: impl FnMut(&TopoGraph, usize) -> CoreResult<Vec<Option<usize>>>,
) -> anyhow::Result<MetricRow> {
    let mut pairs = Vec::new();
    for g in graphs {
        pairs.extend(evaluate_next_hop_planner(g, |t| tables(g, t))?);
    }
    score(method, param, &pairs)
}

pub fn threshold_sweep(graphs: &[TopoGraph], taus: &[f64]) -> anyhow::Result<Vec<MetricRow>> {
    taus.iter()
        .map(|&tau| symbolic_row("threshold", Some(tau), graphs, |g, t| threshold_next_hops(g, tau, t)))
        .collect()
}

pub fn custom_cost_sweep(graphs: &[TopoGraph], lambdas: &[f64]) -> anyhow::Result<Vec<MetricRow>> {
    lambdas
        .iter()
        .map(|&l| symbolic_row("custom-cost", Some(l), graphs, |g, t| custom_cost_next_hops(g, l, t)))
        .collect()
}

/// Highest-accuracy row; ties keep the earliest.
pub fn best_by_accuracy(rows: &[MetricRow]) -> Option<&MetricRow> {
    rows.iter().fold(None, |best: Option<&MetricRow>, r| match best {
        Some(b) if b.accuracy >= r.accuracy => Some(b),
        _ => Some(r),
    })
}

pub fn neural_row(method: &str, params: &NeuralPlannerParams, model: &LoadedModel, mode: GtChannelMode, graphs: &[TopoGraph]) -> anyhow::Result<MetricRow> {
    let (s, _) = evaluate_planner(params, graphs, mode, &model.train.eval_options())?;
    Ok(MetricRow {
        method: method.into(),
        param: None,
        accuracy: s.accuracy,
        hspl: s.hspl,
        n_pairs: s.n_pairs,
    })
}

pub struct EvalPlannerReport {
    pub sweep: Vec<MetricRow>,
    pub summary: Vec<MetricRow>,
}

fn write_rows(path: &Path, rows: &[MetricRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "param", "accuracy", "hspl", "n_pairs"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.param.map(exact).unwrap_or_default(),
            exact(r.accuracy),
            exact(r.hspl),
            r.n_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &RunConfig, args: &EvalPlannerArgs<'_>, out: &Path) -> anyhow::Result<EvalPlannerReport> {
    let cap = match args.split {
        Split::Train => cfg.data.max_train_graphs,
        Split::Val => cfg.data.max_val_graphs,
        Split::Test => cfg.data.max_test_graphs,
    };
    let graphs: Vec<TopoGraph> = load_graphs(args.data, args.split, cap)?.into_iter().map(|g| g.graph).collect();
    let mut run = RunManifest::new("eval-planner", cfg);
    run.input("manifest", &args.data.join("manifest.json"))?;
    run.input(split_name(args.split), &args.data.join(args.split.file_name()))?;

    let taus = threshold_sweep(&graphs, &cfg.eval.taus)?;
    let lambdas = custom_cost_sweep(&graphs, &cfg.eval.lambdas)?;
    let mut summary = Vec::new();
    for (name, rows) in [("threshold-best", &taus), ("custom-cost-best", &lambdas)] {
        if let Some(b) = best_by_accuracy(rows) {
            summary.push(MetricRow { method: name.into(), ..b.clone() });
        }
    }
    summary.push(symbolic_row("symbolic-gt", None, &graphs, gt_next_hops)?);

    let neural = [
        ("neural", &args.checkpoint),
        ("neural-novis", &args.checkpoint_novis),
        ("neural-gt", &args.checkpoint_gt),
    ];
    for (name, path) in neural {
        if let Some(path) = path {
            let model = LoadedModel::load(path)?;
            run.input(name, path)?;
            let row = neural_row(name, &model.params, &model, model.mode, &graphs)?;
            eprintln!("{name}: accuracy {:.4} h-spl {:.4}", row.accuracy, row.hspl);
            summary.push(row);
        }
    }

    let mut sweep = taus;
    sweep.extend(lambdas);
    write_rows(&out.join("planner_sweep.csv"), &sweep)?;
    write_rows(&out.join("planner_metrics.csv"), &summary)?;
    for r in &summary {
        println!("{:<18} {:>6} acc {:.4}  h-spl {:.4}  pairs {}", r.method, r.param.map(|p| p.to_string()).unwrap_or_default(), r.accuracy, r.hspl, r.n_pairs);
    }
    run.output("sweep", &out.join("planner_sweep.csv"))?;
    run.output("metrics", &out.join("planner_metrics.csv"))?;
    run.metrics = json!({ "split": split_name(args.split), "summary": summary, "sweep": sweep });
    run.write(out)?;
    Ok(EvalPlannerReport { sweep, summary })
}
