//! Command line runner for the offline-to-online experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use simplified_q::harness::{
    collect, diagnose, evaluate, plot_csv, sweep, train_offline, train_online, DiagnosticKind,
    ExperimentConfig, RunDir, Stage,
};

#[derive(Debug, Parser)]
#[command(name = "simplq", version, about = "Offline-to-online RL experiments")]
struct Cli {
    /// Log level when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; the first configured seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value`, applied in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record scripted demonstrations.
    Collect(RunArgs),
    /// Train on the demonstrations only.
    TrainOffline(RunArgs),
    /// Continue from the offline checkpoint with live episodes.
    TrainOnline(RunArgs),
    /// Mean-action rollouts of a checkpoint.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "online")]
        stage: Stage,
        /// Overrides the configured attempt count.
        #[arg(long)]
        attempts: Option<usize>,
    },
    /// Write diagnostic reports for a checkpoint.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "online")]
        stage: Stage,
        /// Comma-separated subset of similarity, q_trace, histogram, field.
        #[arg(long, value_delimiter = ',', default_value = "")]
        which: Vec<String>,
    },
    /// Render CSV artifacts as SVG.
    Plot {
        /// CSV files to render.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for the SVG files; next to each input when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full protocol for every seed and grid cell.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `key=v1,v2,...`; repeat for a Cartesian product.
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        grid: Vec<String>,
    },
}

struct Resolved {
    cfg: ExperimentConfig,
    seed: u64,
    run: RunDir,
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(&args.overrides)?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let root = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join(format!("seed{seed}")));
    let run = RunDir::create(&root)?;
    Ok(Resolved { cfg, seed, run })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn svg_path(input: &Path, out: Option<&Path>) -> PathBuf {
    let name = input.with_extension("svg");
    match out {
        Some(dir) => dir.join(name.file_name().unwrap_or_default()),
        None => name,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(args) => {
            let r = resolve(&args)?;
            let demos = collect(&r.cfg, r.seed, &r.run)?;
            println!("{} demonstrations written to {}", demos.len(), r.run.dataset().display());
        }
        Command::TrainOffline(args) => {
            let r = resolve(&args)?;
            let out = train_offline(&r.cfg, r.seed, &r.run)?;
            print_json(&out.last)?;
        }
        Command::TrainOnline(args) => {
            let r = resolve(&args)?;
            let out = train_online(&r.cfg, r.seed, &r.run)?;
            println!(
                "{} episodes, final success {:.3}",
                out.records.len(),
                out.final_success
            );
        }
        Command::Evaluate { run, stage, attempts } => {
            let mut r = resolve(&run)?;
            if let Some(n) = attempts {
                r.cfg.eval_attempts = n;
            }
            print_json(&evaluate(&r.cfg, r.seed, &r.run, stage)?)?;
        }
        Command::Diagnose { run, stage, which } => {
            let r = resolve(&run)?;
            let kinds = which
                .iter()
                .filter(|w| !w.is_empty())
                .map(|w| w.parse::<DiagnosticKind>())
                .collect::<Result<Vec<_>, _>>()?;
            for path in diagnose(&r.cfg, r.seed, &r.run, stage, &kinds)? {
                println!("{}", path.display());
            }
        }
        Command::Plot { inputs, out } => {
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)
                    .map_err(|e| simplified_q::Error::io(dir, e))
                    .with_context(|| "creating plot directory")?;
            }
            for input in &inputs {
                let target = svg_path(input, out.as_deref());
                let kind = plot_csv(input, &target)
                    .with_context(|| format!("plotting {}", input.display()))?;
                println!("{} ({kind:?})", target.display());
            }
        }
        Command::Sweep { run, grid } => {
            let base = match &run.config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            let mut cfg = base.with_overrides(&run.overrides)?;
            if let Some(out) = run.out {
                cfg.out_dir = out;
            }
            if let Some(seed) = run.seed {
                cfg.seeds = vec![seed];
            }
            for entry in sweep(&cfg, &grid)? {
                for r in &entry.runs {
                    println!(
                        "{} seed {}: offline eval {:.3}, final online {}",
                        entry.variant,
                        r.seed,
                        r.offline_eval.success_rate,
                        r.online
                            .as_ref()
                            .map_or_else(|| "-".into(), |o| format!("{:.3}", o.final_success))
                    );
                }
            }
        }
    }
    Ok(())
}

/// Divergence 2, configuration 3, I/O 4.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<simplified_q::Error>())
        .map_or(3, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
