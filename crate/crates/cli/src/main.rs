//! `rrm` — scheduling-simulator and offline MARL command line.
//!
//! Verbs: collect, mix, subsample, train, eval, compare, rerun. Every
//! command writes a `<output>.manifest.json` sufficient to reproduce its
//! outputs byte-identically via `rrm rerun`.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    load_config_map, resolve_env, resolve_trainer, run_collect, run_compare, run_eval, run_mix,
    run_rerun, run_subsample, run_train, CollectRequest, CompareRequest, EvalRequest, MixRequest,
    SubsampleRequest, TrainRequest,
};
use rrm_core::error::Error;
use rrm_core::kv;
use rrm_core::marl::Algo;

#[derive(Parser)]
#[command(
    name = "rrm",
    version,
    about = "Downlink scheduling simulator with offline multi-agent RL training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset by running a behavioral policy
    Collect {
        /// Flat key=value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inline config override, repeatable
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// rw | greedy | tdm | itlinq | model:<path>
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 80)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix datasets by proportion into a new dataset
    Mix {
        /// Source dataset, repeatable in order
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
        /// Comma-separated proportions summing to 1, e.g. 0.5,0.5
        #[arg(long)]
        proportions: String,
        /// Output record count (defaults to the largest feasible)
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniformly subsample a dataset without replacement
    Subsample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent online or offline
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// sac-c | dqn-c | sac-i | sac-ctde | cql-c | cql-i | cql-ctde
        #[arg(long)]
        algo: String,
        /// Offline dataset (required for cql-* algorithms)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Training iterations K (offline) or episodes (online)
        #[arg(long)]
        iters: Option<usize>,
        /// Gradient steps per iteration G
        #[arg(long = "grad-steps")]
        grad_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output model path
        #[arg(long, default_value = "model.net")]
        out: PathBuf,
        /// Learning-curve CSV path
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Trailing moving-average window for the curve's eval columns
        #[arg(long)]
        window: Option<usize>,
    },
    /// Evaluate one policy or model over seeded episodes
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// rw | greedy | tdm | itlinq | model:<path>
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-episode CSV output
        #[arg(long)]
        csv: PathBuf,
        /// Summary JSON output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a set of policies over shared seeds, side by side
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma-separated policy list
        #[arg(long, default_value = "rw,greedy,tdm,itlinq")]
        policy: String,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comparison table CSV output
        #[arg(long)]
        csv: PathBuf,
    },
    /// Re-execute a recorded run; outputs land in --out-dir
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

/// Exit codes: 0 success, 1 runtime, 2 usage, 3 config, 4 I/O, 5 numerical.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::UnknownPolicy(_)
        | Error::IncompatibleConfig(_)
        | Error::ProportionSum(_)
        | Error::SizeExceedsSource { .. }
        | Error::TooFewSamples { .. }
        | Error::PlacementInfeasible { .. }
        | Error::EmptyDataset => 3,
        Error::Io(_) | Error::Format(_) => 4,
        Error::NonFinite { .. } => 5,
        _ => 1,
    }
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("usage error: {msg}");
    ExitCode::from(2)
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<(), Error> {
    match cli.command {
        Command::Collect {
            config,
            set,
            policy,
            episodes,
            seed,
            out,
        } => {
            let mut map = load_config_map(config.as_deref(), &set)?;
            let (net, itlinq) = resolve_env(&mut map)?;
            let _ = resolve_trainer(&mut map, Algo::CqlCtde)?;
            kv::reject_unknown(&map)?;
            run_collect(
                &CollectRequest {
                    net,
                    itlinq,
                    policy,
                    episodes,
                    seed,
                    out,
                },
                argv,
            )
        }
        Command::Mix {
            datasets,
            proportions,
            size,
            seed,
            out,
        } => {
            let proportions: Vec<f64> = proportions
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad proportion '{p}': {e}")))
                })
                .collect::<Result<_, _>>()?;
            run_mix(
                &MixRequest {
                    datasets,
                    proportions,
                    size,
                    seed,
                    out,
                },
                argv,
            )
        }
        Command::Subsample {
            dataset,
            size,
            seed,
            out,
        } => run_subsample(
            &SubsampleRequest {
                dataset,
                size,
                seed,
                out,
            },
            argv,
        ),
        Command::Train {
            config,
            set,
            algo,
            dataset,
            iters,
            grad_steps,
            seed,
            out,
            csv,
            window,
        } => {
            let algo: Algo = algo.parse()?;
            let mut map = load_config_map(config.as_deref(), &set)?;
            let (net, itlinq) = resolve_env(&mut map)?;
            let mut trainer = resolve_trainer(&mut map, algo)?;
            kv::reject_unknown(&map)?;
            if let Some(iters) = iters {
                trainer.iterations = iters;
            }
            if let Some(grad_steps) = grad_steps {
                trainer.grad_steps_per_iter = grad_steps;
            }
            if let Some(seed) = seed {
                trainer.seed = seed;
            }
            run_train(
                &TrainRequest {
                    net,
                    itlinq,
                    trainer,
                    dataset,
                    out,
                    csv,
                    window,
                },
                argv,
            )
        }
        Command::Eval {
            config,
            set,
            policy,
            episodes,
            seed,
            csv,
            out,
        } => {
            let mut map = load_config_map(config.as_deref(), &set)?;
            let (net, itlinq) = resolve_env(&mut map)?;
            let _ = resolve_trainer(&mut map, Algo::CqlCtde)?;
            kv::reject_unknown(&map)?;
            run_eval(
                &EvalRequest {
                    net,
                    itlinq,
                    policy,
                    episodes,
                    seed,
                    csv,
                    summary_out: out,
                },
                argv,
            )
        }
        Command::Compare {
            config,
            set,
            policy,
            episodes,
            seed,
            csv,
        } => {
            let mut map = load_config_map(config.as_deref(), &set)?;
            let (net, itlinq) = resolve_env(&mut map)?;
            let _ = resolve_trainer(&mut map, Algo::CqlCtde)?;
            kv::reject_unknown(&map)?;
            let policies: Vec<String> = policy
                .split(',')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect();
            run_compare(
                &CompareRequest {
                    net,
                    itlinq,
                    policies,
                    episodes,
                    seed,
                    csv,
                },
                argv,
            )
        }
        Command::Rerun { manifest, out_dir } => run_rerun(&manifest, &out_dir, argv),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();

    // Offline algorithms cannot run without a dataset; that is a usage
    // mistake, not a config problem.
    if let Command::Train {
        algo, dataset: None, ..
    } = &cli.command
    {
        if matches!(algo.parse::<Algo>(), Ok(a) if a.is_offline()) {
            return usage_error(&format!("--algo {algo} requires --dataset"));
        }
    }

    match dispatch(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
