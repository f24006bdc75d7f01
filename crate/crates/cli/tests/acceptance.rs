//! End-to-end acceptance run over the ten benchmark criteria.
//!
//! Prints one `criterion N: PASS|FAIL` line per criterion. The run only
//! exits non-zero on a failing criterion when `TOPOPLAN_ACCEPTANCE_STRICT=1`;
//! otherwise the lines are the report. `TOPOPLAN_ACCEPTANCE_SCALE=smoke`
//! shrinks data and training for a quick plumbing check; the default is
//! the desk benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoplan::gt_channel_reads;
use topoplan::hierarchical::{spl_metric, EpisodeResult, SuiteSummary};
use topoplan::planner::{gradcheck, moddrop_probability, Aggregator, ChannelSchedule, GradcheckConfig, TrainConfig};
use topoplan::symbolic::{bellman_ford, brute_force_shortest, dijkstra, hspl_metric};
use topoplan::worldgen::Split;
use topoplan::TopoGraph;
use topoplan_cli::commands::eval_hierarchical::{self, EvalHierarchicalArgs};
use topoplan_cli::commands::eval_planner::{self, EvalPlannerArgs, MetricRow};
use topoplan_cli::commands::{gen_data, gradcheck as gradcheck_cmd, train};
use topoplan_cli::config::sha256_hex;
use topoplan_cli::RunConfig;

struct Scale {
    name: &'static str,
    n_graphs: usize,
    /// Training-set sizes in (graph, target) instances for the data sweep;
    /// the last one is also the training set of the main models.
    sizes: [usize; 4],
    max_val: usize,
    max_test: usize,
    epochs: usize,
    width: usize,
    batch_size: usize,
    episodes: usize,
}

impl Scale {
    fn from_env() -> Self {
        match std::env::var("TOPOPLAN_ACCEPTANCE_SCALE").as_deref() {
            Ok("smoke") => Scale {
                name: "smoke",
                n_graphs: 40,
                sizes: [64, 128, 192, 256],
                max_val: 3,
                max_test: 4,
                epochs: 1,
                width: 8,
                batch_size: 8,
                episodes: 20,
            },
            _ => Scale {
                name: "desk",
                n_graphs: 1100,
                sizes: [1000, 2000, 4000, 8000],
                max_val: 10,
                max_test: 0,
                epochs: 4,
                width: 32,
                batch_size: 8,
                episodes: 200,
            },
        }
    }

    fn graphs_for(&self, instances: usize) -> usize {
        instances.div_ceil(32)
    }

    fn config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        c.seed = 11;
        c.data.n_graphs = self.n_graphs;
        c.data.max_train_graphs = self.graphs_for(self.sizes[3]);
        c.data.max_val_graphs = self.max_val;
        c.data.max_test_graphs = self.max_test;
        c.train = TrainConfig {
            epochs: self.epochs,
            msg: self.width,
            hidden: self.width,
            r_dim: self.width,
            mlp_hidden: self.width,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        };
        c.hierarchical.episodes = self.episodes;
        c
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> anyhow::Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

#[derive(Default)]
struct Ledger {
    results: Vec<(usize, bool)>,
}

impl Ledger {
    fn report(&mut self, n: usize, r: anyhow::Result<Outcome>) {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        println!("criterion {n}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((n, pass));
    }
}

// ---------------------------------------------------------------- criterion 1

fn random_graph(rng: &mut ChaCha8Rng) -> TopoGraph {
    let n = rng.random_range(1..=8);
    let density: f64 = rng.random_range(0.1..0.9);
    let locs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let mut probs = vec![vec![0.0; n]; n];
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p: f64 = rng.random();
            probs[i][j] = p;
            probs[j][i] = p;
            adj[i][j] = rng.random::<f64>() < density;
            adj[j][i] = adj[i][j];
        }
    }
    let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0]).collect();
    TopoGraph::from_locations(&locs, &probs, &feats, Some(&adj)).expect("valid random graph")
}

fn criterion_1() -> anyhow::Result<Outcome> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared = 0usize;
    for gi in 0..1000 {
        let g = random_graph(&mut rng);
        let adj = g.gt_mask()?.to_vec();
        for t in g.valid_nodes() {
            let d = dijkstra(&g, &adj, t)?;
            let b = bellman_ford(&g, &adj, t, g.n_nodes.saturating_sub(1))?;
            for s in g.valid_nodes() {
                // Bounds grow outward from the root t, so enumerate from t to
                // sum each path in the same order.
                let bf = brute_force_shortest(&g, &adj, t, s)?;
                let brute = if bf.reached { bf.total_dist } else { f64::INFINITY };
                if d.bounds[s].to_bits() != b.bounds[s].to_bits() || d.bounds[s].to_bits() != brute.to_bits() {
                    return outcome(
                        false,
                        format!("graph {gi} ({s}->{t}): dijkstra {} bellman-ford {} brute force {brute}", d.bounds[s], b.bounds[s]),
                    );
                }
                compared += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(secs < 10.0, format!("1000 graphs, {compared} bounds identical, {secs:.2}s (< 10s)"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> anyhow::Result<Outcome> {
    let t0 = Instant::now();
    let report = gradcheck(&GradcheckConfig::default())?;
    let secs = t0.elapsed().as_secs_f64();
    let worst = report.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let all = report.results.len() == 20 && report.results.iter().all(|r| r.max_rel_error < 1e-4);
    outcome(all && report.passed && secs < 60.0, format!("20 configurations, worst relative error {worst:.2e} (< 1e-4), {secs:.1}s (< 60s)"))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> anyhow::Result<Outcome> {
    let ep = |success, achieved, optimum| EpisodeResult {
        success,
        low_level_steps: 0,
        achieved_length: achieved,
        geodesic_optimum: optimum,
        target_node: 0,
        trace: Vec::new(),
    };
    let optimal = [ep(true, 2.5, 2.5), ep(true, 0.7, 0.7), ep(true, 13.1, 13.1)];
    let failed = [ep(false, 2.5, 2.5), ep(false, 9.0, 1.0)];
    let checks = [
        ("SPL optimal", spl_metric(&optimal), 1.0),
        ("SPL failures", spl_metric(&failed), 0.0),
        ("SPL 2x detour", spl_metric(&[ep(true, 6.0, 3.0)]), 0.5),
        ("H-SPL optimal", hspl_metric(&[(true, 4.2, 4.2), (true, 1.0, 1.0)]), 1.0),
        ("H-SPL failures", hspl_metric(&[(false, 4.2, 4.2), (false, 0.0, 1.0)]), 0.0),
        ("H-SPL 2x detour", hspl_metric(&[(true, 8.4, 4.2)]), 0.5),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name} = {got} (want {want})"))
        .collect();
    outcome(bad.is_empty(), if bad.is_empty() { "all six identities exact".to_string() } else { bad.join("; ") })
}

// ------------------------------------------------------------- shared runs

fn fresh_dir(root: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let p = root.join(name);
    if p.exists() {
        std::fs::remove_dir_all(&p)?;
    }
    std::fs::create_dir_all(&p)?;
    Ok(p)
}

fn train_model(cfg: &RunConfig, data: &Path, root: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let out = fresh_dir(root, name)?;
    let t0 = Instant::now();
    let cfg = cfg.clone().resolved()?;
    train::run(&cfg, &train::TrainArgs { data }, &out).with_context(|| format!("training {name}"))?;
    eprintln!("[acceptance] trained {name} in {:.0}s", t0.elapsed().as_secs_f64());
    Ok(out.join("checkpoint.json"))
}

fn row<'a>(rows: &'a [MetricRow], method: &str) -> anyhow::Result<&'a MetricRow> {
    rows.iter().find(|r| r.method == method).ok_or_else(|| anyhow!("no {method} row"))
}

fn max_over_sweeps(sweep: &[MetricRow], f: impl Fn(&MetricRow) -> f64) -> f64 {
    sweep.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

fn suite<'a>(rows: &'a [SuiteSummary], planner: &str, mode: &str, m: usize) -> anyhow::Result<&'a SuiteSummary> {
    rows.iter()
        .find(|r| r.planner == planner && r.mode == mode && r.m == m)
        .ok_or_else(|| anyhow!("no {planner}/{mode}/m={m} row"))
}

fn file_sha(p: &Path) -> anyhow::Result<String> {
    Ok(sha256_hex(&std::fs::read(p).with_context(|| p.display().to_string())?))
}

// --------------------------------------------------------------- criterion 10

fn criterion_10(root: &Path) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.data.n_graphs = 11;
    cfg.data.max_train_graphs = 2;
    cfg.data.max_test_graphs = 2;
    cfg.train.epochs = 2;
    cfg.train.msg = 6;
    cfg.train.hidden = 6;
    cfg.train.r_dim = 6;
    cfg.train.mlp_hidden = 6;
    cfg.train.batch_size = 8;
    cfg.eval.taus = vec![0.3, 0.6];
    cfg.eval.lambdas = vec![0.0, 1.0];
    cfg.hierarchical.episodes = 6;
    let cfg = cfg.resolved()?;
    let mut digests: Vec<Vec<(String, String)>> = Vec::new();
    for rep in 0..2 {
        let base = fresh_dir(root, &format!("determinism-{rep}"))?;
        let data = fresh_dir(&base, "data")?;
        gen_data::run(&cfg, &data)?;
        let tr = fresh_dir(&base, "train")?;
        train::run(&cfg, &train::TrainArgs { data: &data }, &tr)?;
        let ck = tr.join("checkpoint.json");
        let ev = fresh_dir(&base, "eval")?;
        eval_planner::run(
            &cfg,
            &EvalPlannerArgs {
                data: &data,
                split: Split::Test,
                checkpoint: Some(ck.clone()),
                checkpoint_novis: None,
                checkpoint_gt: None,
            },
            &ev,
        )?;
        let hi = fresh_dir(&base, "hier")?;
        eval_hierarchical::run(&cfg, &EvalHierarchicalArgs { data: &data, checkpoint: Some(ck.clone()) }, &hi)?;
        let gc = fresh_dir(&base, "gradcheck")?;
        gradcheck_cmd::run(&cfg, &gradcheck_cmd::GradcheckArgs { configurations: 3, perturb_backward: false }, &gc)?;
        let files = [
            ("gen-data manifest", data.join("manifest.json")),
            ("gen-data train split", data.join("train.jsonl")),
            ("train checkpoint", ck),
            ("train curve", tr.join("curve.csv")),
            ("eval-planner metrics", ev.join("planner_metrics.csv")),
            ("eval-planner sweep", ev.join("planner_sweep.csv")),
            ("eval-hierarchical summary", hi.join("hierarchical.csv")),
            ("eval-hierarchical traces", hi.join("traces.jsonl")),
            ("gradcheck report", gc.join("gradcheck.csv")),
        ];
        digests.push(files.iter().map(|(n, p)| Ok((n.to_string(), file_sha(p)?))).collect::<anyhow::Result<_>>()?);
    }
    let differing: Vec<&str> = digests[0]
        .iter()
        .zip(&digests[1])
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} outputs of 5 commands bit-identical across reruns", digests[0].len())
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------------- main

fn main() {
    let scale = Scale::from_env();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{}", scale.name));
    println!("acceptance run at {} scale, artifacts in {}", scale.name, root.display());
    let mut ledger = Ledger::default();
    ledger.report(1, criterion_1());
    ledger.report(2, criterion_2());

    let learned = run_learned(&scale, &root);
    let (c3, c4, c5, c6, c7, c8) = match learned {
        Ok(l) => (Ok(l.c3), Ok(l.c4), Ok(l.c5), Ok(l.c6), Ok(l.c7), Ok(l.c8)),
        Err(e) => {
            let msg = format!("{e:#}");
            let err = || Err(anyhow!("pipeline failed: {msg}"));
            (err(), err(), err(), err(), err(), err())
        }
    };
    ledger.report(3, c3);
    ledger.report(4, c4);
    ledger.report(5, c5);
    ledger.report(6, c6);
    ledger.report(7, c7);
    ledger.report(8, c8);
    ledger.report(9, criterion_9());
    ledger.report(10, criterion_10(&root));

    let passed = ledger.results.iter().filter(|r| r.1).count();
    println!("acceptance: {passed}/{} criteria passed", ledger.results.len());
    if std::env::var("TOPOPLAN_ACCEPTANCE_STRICT").as_deref() == Ok("1") && passed != ledger.results.len() {
        std::process::exit(1);
    }
}

struct Learned {
    c3: Outcome,
    c4: Outcome,
    c5: Outcome,
    c6: Outcome,
    c7: Outcome,
    c8: Outcome,
}

fn run_learned(scale: &Scale, root: &Path) -> anyhow::Result<Learned> {
    std::fs::create_dir_all(root)?;
    let base = scale.config();
    let data = fresh_dir(root, "data")?;
    gen_data::run(&base.clone().resolved()?, &data)?;

    // Main models on the largest training set.
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let gt = train_model(&with(&|c| c.train.channel = ChannelSchedule::GtOnly), &data, root, "model-gt")?;
    let full = train_model(&base, &data, root, "model-full")?;
    let novis = train_model(&with(&|c| c.train.use_features = false), &data, root, "model-novis")?;
    let mean = train_model(&with(&|c| c.train.aggregator = Aggregator::Mean), &data, root, "model-mean")?;
    let mut by_size = Vec::new();
    for &size in &scale.sizes[..3] {
        let cfg = with(&|c| c.data.max_train_graphs = scale.graphs_for(size));
        by_size.push((size, train_model(&cfg, &data, root, &format!("model-size-{size}"))?));
    }
    by_size.push((scale.sizes[3], full.clone()));

    let eval_cfg = base.clone().resolved()?;
    let eval = |name: &str, neural: Option<PathBuf>, novis: Option<PathBuf>, gt: Option<PathBuf>| {
        let out = fresh_dir(root, name)?;
        eval_planner::run(
            &eval_cfg,
            &EvalPlannerArgs {
                data: &data,
                split: Split::Test,
                checkpoint: neural,
                checkpoint_novis: novis,
                checkpoint_gt: gt,
            },
            &out,
        )
    };

    // Criterion 3: ground-truth channel.
    let r3 = eval("eval-gt", None, None, Some(gt))?;
    let ngt = row(&r3.summary, "neural-gt")?;
    let sgt = row(&r3.summary, "symbolic-gt")?;
    let c3 = Outcome {
        pass: ngt.accuracy >= 0.85 && ngt.hspl >= 0.95 && sgt.accuracy == 1.0,
        detail: format!(
            "neural-gt accuracy {:.4} (>= 0.85), H-SPL {:.4} (>= 0.95); symbolic-gt accuracy {}",
            ngt.accuracy, ngt.hspl, sgt.accuracy
        ),
    };

    // Criteria 4 and 6: uncertain graphs, with the GT read counter around
    // every probabilities-only evaluation.
    let reads = gt_channel_reads();
    let r4 = eval("eval-noisy", Some(full.clone()), Some(novis), None)?;
    let leaked = gt_channel_reads() - reads;
    let nv = row(&r4.summary, "neural")?;
    let nn = row(&r4.summary, "neural-novis")?;
    let sym_acc = max_over_sweeps(&r4.sweep, |r| r.accuracy);
    let sym_hspl = max_over_sweeps(&r4.sweep, |r| r.hspl);
    let ordered = |a: f64, b: f64, c: f64| a - b >= 0.02 && b - c >= 0.02;
    let c4 = Outcome {
        pass: ordered(nv.accuracy, nn.accuracy, sym_acc) && ordered(nv.hspl, nn.hspl, sym_hspl),
        detail: format!(
            "accuracy: neural {:.4} / w/o visual {:.4} / best symbolic {:.4}; H-SPL: {:.4} / {:.4} / {:.4} (gaps >= 0.02)",
            nv.accuracy, nn.accuracy, sym_acc, nv.hspl, nn.hspl, sym_hspl
        ),
    };
    let p = |e| moddrop_probability(e, 0.5, 250);
    let schedule_ok = p(0) == 0.5 && p(125) == 0.75 && p(250) == 1.0 && p(1000) == 1.0 && p(50) == 0.6;
    let c6 = Outcome {
        pass: schedule_ok && leaked == 0,
        detail: format!(
            "p(0)={} p(125)={} p(250)={} p(1000)={}; GT channel reads during evaluation: {leaked}",
            p(0),
            p(125),
            p(250),
            p(1000)
        ),
    };

    // Criterion 5: aggregator ablation and data sweep.
    let r5 = eval("eval-mean", Some(mean), None, None)?;
    let mean_acc = row(&r5.summary, "neural")?.accuracy;
    let mut sweep_acc = Vec::new();
    for (size, ck) in &by_size {
        let acc = if *size == scale.sizes[3] {
            nv.accuracy
        } else {
            row(&eval(&format!("eval-size-{size}"), Some(ck.clone()), None, None)?.summary, "neural")?.accuracy
        };
        sweep_acc.push(acc);
    }
    let monotone = sweep_acc.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let c5 = Outcome {
        pass: nv.accuracy - mean_acc >= 0.05 && monotone,
        detail: format!(
            "GRU {:.4} vs mean-pool {:.4} (gap >= 0.05); accuracy by size {:?}: {}",
            nv.accuracy,
            mean_acc,
            scale.sizes,
            sweep_acc.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(" ")
        ),
    };

    // Criteria 7 and 8: hierarchical navigation.
    let hier = fresh_dir(root, "eval-hierarchical")?;
    let h = eval_hierarchical::run(&eval_cfg, &EvalHierarchicalArgs { data: &data, checkpoint: Some(full) }, &hier)?;
    let m = eval_cfg.hierarchical.local.m;
    let neural = suite(&h.rows, "neural", "deterministic", m)?;
    let custom = suite(&h.rows, "custom-cost-best", "deterministic", m)?;
    let random = suite(&h.rows, "random", "uniform", m)?;
    let oracle = suite(&h.rows, "gt-oracle", "deterministic", m)?;
    let c7 = Outcome {
        pass: neural.episodes >= 200
            && neural.success_rate > custom.success_rate
            && custom.success_rate > random.success_rate
            && random.success_rate <= 0.35
            && oracle.success_rate == 1.0
            && neural.spl > custom.spl
            && custom.spl > random.spl,
        detail: format!(
            "success neural {:.3} / custom-cost {:.3} / random {:.3} (<= 0.35) / oracle {:.3}; SPL {:.3} / {:.3} / {:.3}; {} episodes",
            neural.success_rate,
            custom.success_rate,
            random.success_rate,
            oracle.success_rate,
            neural.spl,
            custom.spl,
            random.spl,
            neural.episodes
        ),
    };
    let mut c8_parts = Vec::new();
    let mut c8_pass = true;
    for &mm in &[5usize, 20] {
        let r = suite(&h.rows, "neural", "deterministic", mm)?;
        let ds = (r.success_rate - neural.success_rate).abs();
        let dp = (r.spl - neural.spl).abs();
        c8_pass &= ds < 0.05 && dp < 0.05;
        c8_parts.push(format!("m={mm}: success {:.3} (d {ds:.3}), SPL {:.3} (d {dp:.3})", r.success_rate, r.spl));
    }
    let c8 = Outcome {
        pass: c8_pass,
        detail: format!("m=10: success {:.3}, SPL {:.3}; {} (< 0.05)", neural.success_rate, neural.spl, c8_parts.join("; ")),
    };
    Ok(Learned { c3, c4, c5, c6, c7, c8 })
}
