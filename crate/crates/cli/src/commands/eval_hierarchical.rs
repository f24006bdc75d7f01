use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;
use topoplan::hierarchical::{
    run_episode, sample_episodes, spl_metric, summarize, EpisodeResult, EpisodeSpec, LocalPolicyConfig,
    NeuralWaypointPlanner, RandomPlanner, SuiteSummary, TablePlanner, WaypointPlanner,
};
use topoplan::planner::PredictMode;
use topoplan::symbolic::{custom_cost_next_hops, gt_next_hops, threshold_next_hops};
use topoplan::worldgen::{load_grid, OccupancyGrid, Split};
use topoplan::TopoGraph;

use super::eval_planner::{best_by_accuracy, custom_cost_sweep, threshold_sweep};
use super::load_graphs;
use super::train::LoadedModel;
use crate::{Failure, RunConfig, RunManifest};

pub struct EvalHierarchicalArgs<'a> {
    pub data: &'a Path,
    pub checkpoint: Option<PathBuf>,
}

/// One test environment with its sampled episodes.
pub struct Suite {
    pub env_seed: u64,
    pub grid: OccupancyGrid,
    pub graph: TopoGraph,
    pub episodes: Vec<EpisodeSpec>,
}

/// Spreads `total` episodes round-robin over the test environments.
pub fn build_suites(cfg: &RunConfig, data: &Path, total: usize) -> anyhow::Result<Vec<Suite>> {
    let tests = load_graphs(data, Split::Test, cfg.data.max_test_graphs)?;
    if tests.is_empty() {
        return Err(Failure::Data("test split is empty".into()).into());
    }
    let n = tests.len();
    let h = &cfg.hierarchical;
    let mut out = Vec::new();
    for (i, t) in tests.into_iter().enumerate() {
        let count = total / n + usize::from(i < total % n);
        if count == 0 {
            continue;
        }
        let grid = load_grid(data, &t.grid_ref).map_err(|e| Failure::Data(format!("{}: {e}", t.grid_ref)))?;
        let episodes = sample_episodes(&grid, &t.graph, count, cfg.seed ^ t.env_seed.rotate_left(17), &h.local, h.min_start)?;
        out.push(Suite {
            env_seed: t.env_seed,
            grid,
            graph: t.graph,
            episodes,
        });
    }
    Ok(out)
}

/// A planner factory: one fresh planner per environment.
type Factory<'a> = Box<dyn Fn(&Suite) -> Box<dyn WaypointPlanner + 'a> + 'a>;

struct Entry<'a> {
    planner: String,
    mode: String,
    make: Factory<'a>,
}

fn run_suite(
    suites: &[Suite],
    make: &Factory<'_>,
    budget: usize,
    local: &LocalPolicyConfig,
) -> anyhow::Result<Vec<(u64, usize, EpisodeResult)>> {
    let mut out = Vec::new();
    for s in suites {
        let mut planner = make(s);
        for e in &s.episodes {
            let r = run_episode(&s.grid, &s.graph, planner.as_mut(), e.source, &e.query, budget, local)?;
            out.push((s.env_seed, e.query_node, r));
        }
    }
    Ok(out)
}

pub struct HierarchicalReport {
    pub rows: Vec<SuiteSummary>,
    pub tau: f64,
    pub lambda: f64,
}

pub fn run(cfg: &RunConfig, args: &EvalHierarchicalArgs<'_>, out: &Path) -> anyhow::Result<HierarchicalReport> {
    let h = &cfg.hierarchical;
    let mut run = RunManifest::new("eval-hierarchical", cfg);
    run.input("manifest", &args.data.join("manifest.json"))?;
    run.input("test", &args.data.join(Split::Test.file_name()))?;

    // Symbolic baselines are tuned on held-out graphs, never on test.
    let mut tune = load_graphs(args.data, Split::Val, cfg.data.max_val_graphs)?;
    if tune.is_empty() {
        tune = load_graphs(args.data, Split::Train, cfg.data.max_val_graphs.max(10))?;
    }
    let tune: Vec<TopoGraph> = tune.into_iter().map(|g| g.graph).collect();
    let tau = best_by_accuracy(&threshold_sweep(&tune, &cfg.eval.taus)?).and_then(|r| r.param).unwrap_or(0.5);
    let lambda = best_by_accuracy(&custom_cost_sweep(&tune, &cfg.eval.lambdas)?).and_then(|r| r.param).unwrap_or(1.0);
    eprintln!("tuned threshold {tau}, custom-cost lambda {lambda}");

    let suites = build_suites(cfg, args.data, h.episodes)?;
    let model = match &args.checkpoint {
        Some(p) => {
            run.input("checkpoint", p)?;
            Some(LoadedModel::load(p)?)
        }
        None => None,
    };

    let seed = cfg.seed;
    let mut entries: Vec<Entry<'_>> = vec![
        Entry {
            planner: "random".into(),
            mode: "uniform".into(),
            make: Box::new(move |s: &Suite| Box::new(RandomPlanner::new(seed ^ s.env_seed)) as Box<dyn WaypointPlanner>),
        },
        Entry {
            planner: "threshold-best".into(),
            mode: "deterministic".into(),
            make: Box::new(move |_: &Suite| {
                Box::new(TablePlanner::new(move |g: &TopoGraph, t| threshold_next_hops(g, tau, t))) as Box<dyn WaypointPlanner>
            }),
        },
        Entry {
            planner: "custom-cost-best".into(),
            mode: "deterministic".into(),
            make: Box::new(move |_: &Suite| {
                Box::new(TablePlanner::new(move |g: &TopoGraph, t| custom_cost_next_hops(g, lambda, t))) as Box<dyn WaypointPlanner>
            }),
        },
    ];
    if let Some(m) = &model {
        for (mode, predict) in [("deterministic", PredictMode::Deterministic), ("sampling", PredictMode::Sampling)] {
            entries.push(Entry {
                planner: "neural".into(),
                mode: mode.into(),
                make: Box::new(move |s: &Suite| {
                    Box::new(NeuralWaypointPlanner::new(
                        &m.params,
                        m.mode,
                        m.train.eval_options(),
                        predict,
                        seed ^ s.env_seed ^ 0x5a3c,
                    )) as Box<dyn WaypointPlanner>
                }),
            });
        }
    }
    entries.push(Entry {
        planner: "gt-oracle".into(),
        mode: "deterministic".into(),
        make: Box::new(|_: &Suite| Box::new(TablePlanner::new(gt_next_hops)) as Box<dyn WaypointPlanner>),
    });

    let mut traces = std::io::BufWriter::new(std::fs::File::create(out.join("traces.jsonl"))?);
    let mut rows = Vec::new();
    let mut emit = |planner: &str, mode: &str, local: &LocalPolicyConfig, results: Vec<(u64, usize, EpisodeResult)>| -> anyhow::Result<SuiteSummary> {
        for (i, (env_seed, query_node, r)) in results.iter().enumerate() {
            let line = json!({
                "planner": planner,
                "mode": mode,
                "m": local.m,
                "episode": i,
                "env_seed": env_seed,
                "query_node": query_node,
                "result": r,
            });
            writeln!(traces, "{line}")?;
        }
        let rs: Vec<EpisodeResult> = results.into_iter().map(|(_, _, r)| r).collect();
        let s = summarize(planner, mode, local.m, &rs);
        debug_assert_eq!(s.spl, spl_metric(&rs));
        println!("{:<17} {:<13} m={:<3} success {:.3}  spl {:.3}  ({} episodes)", s.planner, s.mode, s.m, s.success_rate, s.spl, s.episodes);
        Ok(s)
    };

    for e in &entries {
        let results = run_suite(&suites, &e.make, h.budget, &h.local)?;
        rows.push(emit(&e.planner, &e.mode, &h.local, results)?);
    }
    if let Some(neural) = entries.iter().find(|e| e.planner == "neural" && e.mode == "deterministic") {
        for &m in h.m_sweep.iter().filter(|&&m| m != h.local.m) {
            let local = LocalPolicyConfig { m, ..h.local };
            local.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let results = run_suite(&suites, &neural.make, h.budget, &local)?;
            rows.push(emit("neural", "deterministic", &local, results)?);
        }
    }
    traces.flush()?;
    drop(traces);

    let mut w = csv::Writer::from_path(out.join("hierarchical.csv"))?;
    w.write_record(["planner", "mode", "m", "success_rate", "spl", "episodes"])?;
    for r in &rows {
        w.write_record([
            r.planner.clone(),
            r.mode.clone(),
            r.m.to_string(),
            super::exact(r.success_rate),
            super::exact(r.spl),
            r.episodes.to_string(),
        ])?;
    }
    w.flush()?;
    run.output("summary", &out.join("hierarchical.csv"))?;
    run.output("traces", &out.join("traces.jsonl"))?;
    run.metrics = json!({ "tau": tau, "lambda": lambda, "rows": rows });
    run.write(out)?;
    Ok(HierarchicalReport { rows, tau, lambda })
}
