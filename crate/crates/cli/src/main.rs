use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ppl_core::data::{load_dataset, save_dataset};
use ppl_core::harness::{
    load_report, render_trajectories, resolve_dataset, run_experiment, w_sweep, DatasetSource,
    EvalEnv, ExperimentSpec,
};
use ppl_core::nets::load_checkpoint;
use ppl_core::oracle::improvement_suite;

/// Partial policy learning: offline RL as partial optimal transport.
#[derive(Parser)]
#[command(name = "ppl", version)]
struct Cli {
    /// Seed override (a single seed for `train`/`sweep`, the generator seed for `dataset gen`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: a directory for `train`/`sweep`, a file for `dataset gen` and `plot`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or check offline datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetCmd,
    },
    /// Train and evaluate every seed of an experiment.
    Train,
    /// Run the experiment once per w.
    Sweep {
        /// Comma-separated w values.
        #[arg(long, value_delimiter = ',', default_value = "1,3,8,12")]
        ws: Vec<f64>,
    },
    /// Roll out a saved policy in the environment of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; defaults to the experiment's dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Draw the trajectories of a report as SVG.
    Plot {
        #[arg(long)]
        report: PathBuf,
    },
    /// Exact tabular checks.
    Oracle {
        #[command(subcommand)]
        action: OracleCmd,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Write a generated dataset as JSONL.
    Gen {
        /// `toy` or `tabular-stitching`; overrides the experiment file.
        #[arg(long)]
        generator: Option<String>,
    },
    /// Parse a dataset file and print a summary.
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// The supported-argmax improvement and performance-difference checks.
    Check {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::from_config_file(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentSpec::from_config_str("")?,
    };
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        spec.output_dir = out.clone();
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Dataset {
            action: DatasetCmd::Gen { generator },
        } => {
            let mut spec = spec(&cli)?;
            let seed = cli.seed.unwrap_or(0);
            spec.dataset = match (generator.as_deref(), spec.dataset) {
                (Some("toy"), DatasetSource::Toy { config, .. })
                | (None, DatasetSource::Toy { config, .. }) => DatasetSource::Toy { config, seed },
                (Some("toy"), _) => DatasetSource::Toy {
                    config: Default::default(),
                    seed,
                },
                (Some("tabular-stitching"), DatasetSource::TabularStitching { config, .. })
                | (None, DatasetSource::TabularStitching { config, .. }) => {
                    DatasetSource::TabularStitching { config, seed }
                }
                (Some("tabular-stitching"), _) => DatasetSource::TabularStitching {
                    config: Default::default(),
                    seed,
                },
                (Some(other), _) => bail!("unknown generator {other:?}"),
                (None, DatasetSource::Path { .. }) => {
                    bail!("the experiment names a dataset file, not a generator")
                }
            };
            let ds = resolve_dataset(&spec.dataset)?;
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("dataset.jsonl"));
            save_dataset(&ds, &out)?;
            for w in &ds.meta().warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} transitions to {}", ds.len(), out.display());
            Ok(true)
        }
        Command::Dataset {
            action: DatasetCmd::Validate { path },
        } => {
            let ds = load_dataset(path)?;
            let rewarded = ds.transitions().iter().filter(|t| t.reward != 0.0).count();
            let done = ds.transitions().iter().filter(|t| t.done).count();
            println!(
                "ok: {} transitions, state dim {}, action dim {}, {} terminal, {} rewarded, generator {:?}",
                ds.len(),
                ds.state_dim(),
                ds.action_dim(),
                done,
                rewarded,
                ds.meta().generator
            );
            for w in &ds.meta().warnings {
                println!("warning: {w}");
            }
            Ok(true)
        }
        Command::Train => {
            let spec = spec(&cli)?;
            let report = run_experiment(&spec)?;
            for s in &report.seeds {
                match &s.status {
                    ppl_core::harness::SeedStatus::Ok => println!(
                        "seed {}: return {} deviation {}",
                        s.seed,
                        fmt_opt(s.mean_discounted()),
                        fmt_opt(s.mean_deviation())
                    ),
                    ppl_core::harness::SeedStatus::Failed { error } => {
                        println!("seed {}: FAILED {error}", s.seed)
                    }
                }
            }
            println!("report: {}", spec.output_dir.join("report.json").display());
            Ok(!report.any_failed())
        }
        Command::Sweep { ws } => {
            let spec = spec(&cli)?;
            let sweep = w_sweep(&spec, ws)?;
            print!("{}", sweep.csv());
            if let Some(w) = sweep.best_w {
                println!("best w: {w}");
            }
            Ok(!sweep.any_failed())
        }
        Command::Eval {
            checkpoint,
            dataset,
            episodes,
        } => {
            let policy = load_checkpoint(checkpoint)?;
            let ds = match dataset {
                Some(p) => load_dataset(p)?,
                None => resolve_dataset(&spec(&cli)?.dataset)?,
            };
            let env = EvalEnv::from_dataset(&ds).context("dataset has no known environment")?;
            for i in 0..*episodes {
                let r = env.rollout(&policy)?;
                println!(
                    "episode {i}: steps {} discounted {:.6} undiscounted {:.6} deviation {}",
                    r.steps,
                    r.discounted_return,
                    r.undiscounted_return,
                    fmt_opt(env.deviation(&r))
                );
            }
            Ok(true)
        }
        Command::Plot { report } => {
            let rep = load_report(report)?;
            let svg = render_trajectories(&rep)?;
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| report.with_file_name("trajectories.svg"));
            std::fs::write(&out, svg)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Oracle {
            action: OracleCmd::Check { instances },
        } => {
            let r = improvement_suite(*instances, cli.seed.unwrap_or(0))?;
            println!(
                "{} instances: {} improvement violations, {} lemma disagreements, min gap {:.3e}, max lemma error {:.3e}",
                r.instances,
                r.violations.len(),
                r.inconsistent.len(),
                r.min_gap,
                r.max_lemma_error
            );
            Ok(r.passed())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
