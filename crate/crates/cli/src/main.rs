//! `pmwpub`: experiment harness for public-data-assisted private query
//! release.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 budget error.

mod config;
mod error;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "pmwpub", version = experiment::VERSION, about)]
struct Cli {
    /// Experiment config (JSON, or TOML with a .toml extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every T x epsilon x repeat cell and aggregate the results.
    Run,
    /// Estimate the public support's best mixture error, optionally releasing it privately.
    MixtureError {
        /// Pure-DP budget for the release; overrides the config.
        #[arg(long)]
        epsilon_probe: Option<f64>,
        /// Multiplicative-weights iterations; overrides the config.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Sample synthetic records from a run's final distribution.
    Synthesize {
        /// Run file (runs/*.json) or bare run report.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
        /// Schema for a bare run report.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Rebuild the aggregate CSVs from the run files in the output directory.
    Aggregate,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run => {
            let cfg = load_config(cli)?;
            let summary = experiment::cmd_run(&cfg, cli.jobs)?;
            println!(
                "wrote {} run files to {}",
                summary.run_files.len(),
                cfg.out_dir.join("runs").display()
            );
            for path in summary.aggregates {
                println!("wrote {}", path.display());
            }
        }
        Command::MixtureError {
            epsilon_probe,
            iterations,
        } => {
            let cfg = load_config(cli)?;
            let out = experiment::cmd_mixture_error(&cfg, *epsilon_probe, *iterations)?;
            let r = &out.report;
            println!(
                "best mixture error estimate: {} (support {} points, {} iterations, best at iterate {}{})",
                r.estimate,
                out.support_size,
                r.iterations,
                r.best_iterate,
                if r.averaged { ", averaged" } else { "" }
            );
            if let (Some(released), Some(ledger)) = (r.released, &out.ledger) {
                println!(
                    "released: {released} (epsilon_probe {}); ledger: +{} zCDP rho for the probe, total rho {}, epsilon {} at delta {}",
                    r.epsilon_probe.unwrap_or_default(),
                    ledger.probe_rho(),
                    ledger.total_rho(),
                    ledger.epsilon_reported,
                    ledger.delta
                );
            }
            let json = serde_json::to_string_pretty(&out)
                .map_err(|e| CliError::Data(e.to_string()))?;
            std::fs::create_dir_all(&cfg.out_dir)
                .map_err(|e| CliError::data(cfg.out_dir.display(), e))?;
            let path = cfg.out_dir.join("mixture_error.json");
            std::fs::write(&path, format!("{json}\n")).map_err(|e| CliError::data(path.display(), e))?;
            println!("{json}");
        }
        Command::Synthesize {
            report,
            rows,
            out,
            schema,
        } => {
            let n = experiment::cmd_synthesize(report, schema.as_deref(), *rows, out, cli.seed.unwrap_or(0))?;
            println!("wrote {n} rows to {}", out.display());
        }
        Command::Aggregate => {
            let dir = match (&cli.out_dir, &cli.config) {
                (Some(d), _) => d.clone(),
                (None, Some(_)) => load_config(cli)?.out_dir,
                (None, None) => return Err(CliError::Config("--out-dir or --config is required".into())),
            };
            for path in experiment::cmd_aggregate(&dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
