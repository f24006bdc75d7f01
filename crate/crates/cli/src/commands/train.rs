use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;
use topoplan::autodiff::Checkpoint;
use topoplan::planner::{build_examples, train, Aggregator, ChannelSchedule, NeuralPlannerParams, TrainConfig, TrainOutcome};
use topoplan::worldgen::Split;
use topoplan::GtChannelMode;

use super::{exact, load_graphs};
use crate::{Failure, RunConfig, RunManifest};

pub struct TrainArgs<'a> {
    pub data: &'a Path,
}

pub fn variant_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::Gru => "full",
        Aggregator::Mean => "meanpool-ablation",
    }
}

pub fn mode_name(m: GtChannelMode) -> &'static str {
    match m {
        GtChannelMode::GtOnly => "gt_only",
        GtChannelMode::ProbsOnly => "probs_only",
        GtChannelMode::Both => "both",
    }
}

fn parse_mode(s: &str) -> anyhow::Result<GtChannelMode> {
    match s {
        "gt_only" => Ok(GtChannelMode::GtOnly),
        "probs_only" => Ok(GtChannelMode::ProbsOnly),
        "both" => Ok(GtChannelMode::Both),
        other => Err(Failure::Data(format!("checkpoint has unknown eval_mode {other:?}")).into()),
    }
}

/// A checkpoint together with the settings it was trained under.
pub struct LoadedModel {
    pub params: NeuralPlannerParams,
    pub train: TrainConfig,
    pub mode: GtChannelMode,
    pub meta: BTreeMap<String, String>,
}

impl LoadedModel {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let ck = Checkpoint::load(path).map_err(|e| Failure::Data(format!("checkpoint {}: {e}", path.display())))?;
        let params = NeuralPlannerParams::from_checkpoint(&ck).map_err(super::data_err)?;
        let meta = ck.meta.clone();
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Failure::Data(format!("checkpoint {} has no {k} entry", path.display())))
        };
        let train: TrainConfig = serde_json::from_str(&get("train_config")?).map_err(super::data_err)?;
        let mode = parse_mode(&get("eval_mode")?)?;
        Ok(Self { params, train, mode, meta })
    }
}

/// Trains one planner on the train split, selecting on the val split, and
/// writes `checkpoint.json` and `curve.csv`.
pub fn run(cfg: &RunConfig, args: &TrainArgs<'_>, out: &Path) -> anyhow::Result<TrainOutcome> {
    let train_set = load_graphs(args.data, Split::Train, cfg.data.max_train_graphs)?;
    let val_set = load_graphs(args.data, Split::Val, cfg.data.max_val_graphs)?;
    let graphs: Vec<_> = train_set.iter().map(|g| g.graph.clone()).collect();
    let val: Vec<_> = val_set.iter().map(|g| g.graph.clone()).collect();
    let examples = build_examples(&graphs)?;
    if examples.is_empty() {
        return Err(Failure::Data("training split has no usable instances".into()).into());
    }
    let tc = &cfg.train;
    let variant = variant_name(tc.aggregator);
    eprintln!(
        "training {variant} on {} graphs ({} instances), {} val graphs, {} epochs",
        graphs.len(),
        examples.len(),
        val.len(),
        tc.epochs
    );

    let curve_path = out.join("curve.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["variant", "epoch", "train_loss", "val_accuracy", "val_hspl", "moddrop_p"])?;
    let mut write_err = None;
    let outcome = train(&graphs, &examples, &val, tc, |r| {
        eprintln!(
            "epoch {:>4}  loss {:.4}  val acc {:.4}  val h-spl {:.4}  p {:.3}",
            r.epoch, r.train_loss, r.val_accuracy, r.val_hspl, r.moddrop_p
        );
        let rec = [
            variant.to_string(),
            r.epoch.to_string(),
            exact(r.train_loss),
            exact(r.val_accuracy),
            exact(r.val_hspl),
            exact(r.moddrop_p),
        ];
        if let Err(e) = w.write_record(rec).and_then(|_| w.flush().map_err(Into::into)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }

    let mut ck = outcome.best.to_checkpoint(tc.seed, outcome.best_epoch);
    ck.meta = BTreeMap::from([
        ("train_config".into(), serde_json::to_string(tc)?),
        ("variant".into(), variant.into()),
        ("eval_mode".into(), mode_name(tc.channel.eval_mode()).into()),
        ("val_accuracy".into(), exact(outcome.best_val.accuracy)),
        ("val_hspl".into(), exact(outcome.best_val.hspl)),
        ("best_epoch".into(), outcome.best_epoch.to_string()),
        ("config_hash".into(), cfg.hash()),
    ]);
    let ck_path = out.join("checkpoint.json");
    ck.save(&ck_path)?;

    let mut run = RunManifest::new("train", cfg);
    run.input("manifest", &args.data.join("manifest.json"))?;
    run.input("train", &args.data.join(Split::Train.file_name()))?;
    run.input("val", &args.data.join(Split::Val.file_name()))?;
    run.output("checkpoint", &ck_path)?;
    run.output("curve", &curve_path)?;
    run.metrics = json!({
        "variant": variant,
        "channel": tc.channel,
        "use_features": tc.use_features,
        "best_epoch": outcome.best_epoch,
        "val_accuracy": outcome.best_val.accuracy,
        "val_hspl": outcome.best_val.hspl,
        "final_train_loss": outcome.curve.last().map(|r| r.train_loss),
    });
    run.write(out)?;
    println!(
        "best epoch {} val accuracy {:.4} h-spl {:.4}",
        outcome.best_epoch, outcome.best_val.accuracy, outcome.best_val.hspl
    );
    Ok(outcome)
}

/// Applies the command-line overrides of `train` to a config.
pub fn apply_overrides(
    tc: &mut TrainConfig,
    aggregator: Option<Aggregator>,
    epochs: Option<usize>,
    no_features: bool,
    channel: Option<ChannelSchedule>,
) {
    if let Some(a) = aggregator {
        tc.aggregator = a;
    }
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    if no_features {
        tc.use_features = false;
    }
    if let Some(c) = channel {
        tc.channel = c;
    }
}
