use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use topoplan::planner::{Aggregator, ChannelSchedule};
use topoplan_cli::commands::{self, eval_hierarchical, eval_planner, gradcheck, train};
use topoplan_cli::{existing_dir, existing_file, exit_code, prepare_out, Failure, RunConfig};

#[derive(Parser)]
#[command(name = "topoplan", version, about = "Planning on uncertain topological maps")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregatorArg {
    Gru,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Moddrop,
    Probs,
    Gt,
}

#[derive(Subcommand)]
enum Command {
    /// Generate environments, graphs and the train/val/test split.
    GenData {
        #[arg(long)]
        n_graphs: Option<usize>,
    },
    /// Train the neural planner.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        aggregator: Option<AggregatorArg>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Zero the visual features at train and eval time.
        #[arg(long)]
        no_features: bool,
        #[arg(long, value_enum)]
        channel: Option<ChannelArg>,
    },
    /// Next-hop accuracy and H-SPL of symbolic and neural planners.
    EvalPlanner {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Model trained with features zeroed.
        #[arg(long)]
        checkpoint_novis: Option<PathBuf>,
        /// Model trained and scored on the ground-truth channel.
        #[arg(long)]
        checkpoint_gt: Option<PathBuf>,
    },
    /// Hierarchical navigation episodes on the test environments.
    EvalHierarchical {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Local policy steps per planning round.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Finite-difference check of the planner gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        configurations: usize,
        /// Inject a wrong backward rule; the check must then fail.
        #[arg(long)]
        perturb_backward: bool,
    },
}

fn opt_file(p: &Option<PathBuf>, what: &str) -> anyhow::Result<Option<PathBuf>> {
    p.as_ref().map(|p| existing_file(p, what)).transpose()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(&existing_file(p, "config").map_err(|e| Failure::Usage(e.to_string()))?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::GenData { n_graphs } => {
            if let Some(n) = n_graphs {
                cfg.data.n_graphs = *n;
            }
        }
        Command::Train { aggregator, epochs, no_features, channel, .. } => train::apply_overrides(
            &mut cfg.train,
            aggregator.map(|a| match a {
                AggregatorArg::Gru => Aggregator::Gru,
                AggregatorArg::Mean => Aggregator::Mean,
            }),
            *epochs,
            *no_features,
            channel.map(|c| match c {
                ChannelArg::Moddrop => ChannelSchedule::ModDrop,
                ChannelArg::Probs => ChannelSchedule::ProbsOnly,
                ChannelArg::Gt => ChannelSchedule::GtOnly,
            }),
        ),
        Command::EvalHierarchical { episodes, m, .. } => {
            if let Some(e) = episodes {
                cfg.hierarchical.episodes = *e;
            }
            if let Some(m) = m {
                cfg.hierarchical.local.m = *m;
            }
        }
        Command::EvalPlanner { .. } | Command::Gradcheck { .. } => {}
    }
    let cfg = cfg.resolved()?;

    match &cli.command {
        Command::GenData { .. } => {
            let out = prepare_out(&cli.out)?;
            commands::gen_data::run(&cfg, &out)?;
        }
        Command::Train { data, .. } => {
            let data = existing_dir(data, "dataset")?;
            let out = prepare_out(&cli.out)?;
            train::run(&cfg, &train::TrainArgs { data: &data }, &out)?;
        }
        Command::EvalPlanner { data, split, checkpoint, checkpoint_novis, checkpoint_gt } => {
            let args = eval_planner::EvalPlannerArgs {
                data: &existing_dir(data, "dataset")?,
                split: commands::parse_split(split)?,
                checkpoint: opt_file(checkpoint, "checkpoint")?,
                checkpoint_novis: opt_file(checkpoint_novis, "checkpoint")?,
                checkpoint_gt: opt_file(checkpoint_gt, "checkpoint")?,
            };
            let out = prepare_out(&cli.out)?;
            eval_planner::run(&cfg, &args, &out)?;
        }
        Command::EvalHierarchical { data, checkpoint, .. } => {
            let args = eval_hierarchical::EvalHierarchicalArgs {
                data: &existing_dir(data, "dataset")?,
                checkpoint: opt_file(checkpoint, "checkpoint")?,
            };
            let out = prepare_out(&cli.out)?;
            eval_hierarchical::run(&cfg, &args, &out)?;
        }
        Command::Gradcheck { configurations, perturb_backward } => {
            let out = prepare_out(&cli.out)?;
            let args = gradcheck::GradcheckArgs {
                configurations: *configurations,
                perturb_backward: *perturb_backward,
            };
            gradcheck::run(&cfg, &args, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
