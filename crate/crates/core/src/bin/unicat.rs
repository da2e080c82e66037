use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unicat::cli::{
    cmd_eval, cmd_gen, cmd_repro, cmd_train, DatasetSource, EvalInput, ExperimentConfig,
    FlagOverrides, TrainOutcome, TrainOverrides,
};
use unicat::evalkit::Suite;
use unicat::objectives::{FusionOperator, Strategy};
use unicat::{Error, Result};

/// Multimodal re-identification experiments on synthetic data.
#[derive(Parser)]
#[command(name = "unicat", version)]
struct Cli {
    /// Worker threads for parallel training cells (results do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as per-modality embedding files.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (or run the configured grid search).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory written by `gen`; defaults to generating from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint, or external embedding files.
    Eval(EvalCmd),
    /// Run a multi-seed reproduction suite and check its directional claims.
    Repro {
        /// laziness-clean, weak-link, ensemble or train-vs-test.
        suite: String,
        /// Number of seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Concat,
    Average,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long, required_unless_present = "external")]
    checkpoint: Option<PathBuf>,
    /// Experiment config whose data section defines the evaluation set.
    #[arg(long, conflicts_with = "data")]
    config: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluate each stream on the training identities.
    #[arg(long)]
    trainset: bool,
    /// Seed of the train-set query/gallery split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate precomputed embeddings instead of a model.
    #[arg(long, requires = "query", conflicts_with_all = ["checkpoint", "config", "data", "trainset"])]
    external: bool,
    /// Query embedding file (repeat once per modality).
    #[arg(long)]
    query: Vec<PathBuf>,
    /// Gallery embedding file (repeat once per modality, same order as --query).
    #[arg(long)]
    gallery: Vec<PathBuf>,
    /// Fusion operator for external embeddings.
    #[arg(long, value_enum, default_value = "concat")]
    fusion: Op,
    #[arg(long)]
    normalize_first: Option<bool>,
    #[arg(long)]
    exclude_same_view: Option<bool>,
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let m = cmd_gen(&cfg, &out)?;
            println!(
                "wrote {} modality files to {}",
                m.files.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            out,
            strategy,
            seed,
            epochs,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let strategy = strategy.map(|s| s.parse::<Strategy>()).transpose()?;
            TrainOverrides {
                strategy,
                seed,
                epochs,
            }
            .apply(&mut cfg)?;
            let outcome = cmd_train(&cfg, data.as_deref(), &out)?;
            if let TrainOutcome::Grid { selection, .. } = &outcome {
                let c = &selection.cells[selection.best];
                println!(
                    "selected batch size {} lr {} (validation mAP {:.4})",
                    c.batch_size, c.lr_base, c.val_map
                );
            }
            let r = outcome.record();
            println!(
                "final loss {:.4}, accuracy {:.4}; wrote {}",
                r.epoch_loss.last().copied().unwrap_or(f64::NAN),
                r.epoch_accuracy.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval(e) => {
            let input = if e.external {
                EvalInput::External {
                    queries: e.query,
                    galleries: e.gallery,
                    op: match e.fusion {
                        Op::Concat => FusionOperator::Concat,
                        Op::Average => FusionOperator::Average,
                    },
                }
            } else {
                let dataset = match (e.config, e.data) {
                    (Some(c), None) => DatasetSource::Config(Box::new(ExperimentConfig::load(&c)?)),
                    (None, Some(d)) => DatasetSource::Dir(d),
                    _ => {
                        return Err(Error::Config(
                            "eval needs exactly one of --config or --data".into(),
                        ))
                    }
                };
                EvalInput::Model {
                    checkpoint: e.checkpoint.expect("clap enforces --checkpoint"),
                    dataset,
                    trainset: e.trainset,
                    seed: e.seed,
                }
            };
            let overrides = FlagOverrides {
                normalize_first: e.normalize_first,
                exclude_same_view: e.exclude_same_view,
                max_rank: e.max_rank,
            };
            let output = cmd_eval(&input, &overrides, &e.out)?;
            for (name, r) in &output.reports {
                println!("{name}: mAP {:.4} rank-1 {:.4}", r.map, r.rank1);
            }
        }
        Command::Repro {
            suite,
            seeds,
            first_seed,
            epochs,
            out,
        } => {
            let suite: Suite = suite.parse()?;
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let result = cmd_repro(suite, &seeds, epochs, &out)?;
            for c in &result.claims {
                println!("{c}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
