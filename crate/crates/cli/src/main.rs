//! Command-line front end for the broker / informed-trader game.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use brokergame::{BrokerMode, SignalSource};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{FileConfig, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "brokergame", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Solve both agents' coefficients and export them with the eigenvalue check.
    Coeffs,
    /// Export the existence diagnostic of the broker's Riccati system.
    Diag,
    /// Simulate one path; `--band-paths M` adds 5th/95th percentile bands.
    Path {
        #[arg(long)]
        band_paths: Option<usize>,
    },
    /// Compare the optimal broker with the benchmarks over many paths.
    Experiment,
    /// Repeat the experiment with learning parameters scaled in the broker's model.
    Stress,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Price,
    Flow,
    Naive,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BenchmarkArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration file; missing keys take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Signal estimate used by the optimal broker.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Benchmarks to compare against; for `path`, the single arm to simulate.
    #[arg(long, global = true, value_enum)]
    benchmark: Option<BenchmarkArg>,
    /// Draw the trader's initial inventory from N(0, 1), unknown to the broker.
    #[arg(long, global = true)]
    mispecify_qi: bool,
    #[arg(long, global = true)]
    c_belief: Option<f64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let o = &cli.overrides;
    let mut file = FileConfig::load(o.config.as_deref())?;
    if let Some(s) = o.seed {
        file.run.seed = s;
    }
    if let Some(n) = o.paths {
        file.run.paths = n;
    }
    if let Some(m) = o.mode {
        file.strategy.signal_source = match m {
            ModeArg::Price => SignalSource::Price,
            ModeArg::Flow => SignalSource::Flow,
            ModeArg::Naive => SignalSource::Naive,
        };
    }
    if let Some(b) = o.benchmark {
        file.run.benchmarks = match b {
            BenchmarkArg::One => vec![1],
            BenchmarkArg::Two => vec![2],
            BenchmarkArg::Three => vec![3],
            BenchmarkArg::All => vec![1, 2, 3],
        };
    }
    if o.mispecify_qi {
        file.strategy.mispecify_qi = true;
    }
    if let Some(c) = o.c_belief {
        file.params.c_belief = c;
    }
    if let Some(d) = &o.out_dir {
        file.run.out_dir = d.clone();
    }
    if let Some(t) = o.threads {
        file.run.threads = t;
    }
    if let Command::Path {
        band_paths: Some(m),
    } = cli.command
    {
        file.run.band_paths = m;
    }
    file.resolve()
}

fn path_mode(b: Option<BenchmarkArg>) -> Result<Option<BrokerMode>, CliError> {
    Ok(match b {
        None => None,
        Some(BenchmarkArg::One) => Some(BrokerMode::Benchmark1),
        Some(BenchmarkArg::Two) => Some(BrokerMode::Benchmark2),
        Some(BenchmarkArg::Three) => Some(BrokerMode::Benchmark3),
        Some(BenchmarkArg::All) => {
            return Err(CliError::Validation(
                "path simulates a single arm; use --benchmark 1, 2 or 3".into(),
            ))
        }
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if cfg.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("threads: {e}")))?;
    }
    match cli.command {
        Command::Coeffs => {
            for p in commands::coeffs(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Diag => {
            commands::diag(&cfg)?;
        }
        Command::Path { .. } => {
            commands::path(&cfg, path_mode(cli.overrides.benchmark)?)?;
            println!("wrote {}", cfg.run.out_dir.join("path.csv").display());
        }
        Command::Experiment => commands::experiment(&cfg)?,
        Command::Stress => commands::stress(&cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
