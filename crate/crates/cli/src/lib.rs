//! Command-line front end for `fbmlab`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use commands::Outcome;
use config::{Command, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fbmlab", version, about = "Simulate fractional Brownian motion and measure discretisation rates")]
pub struct Cli {
    /// Worker threads for replicate loops (default: all cores).
    #[arg(long, global = true, env = "FBMLAB_THREADS")]
    pub threads: Option<usize>,
    /// Suppress diagnostics on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub set: Vec<(String, String)>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Sub,
}

fn parse_assignment(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Sample an fBm path and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate local time at one or more levels.
    Localtime(LocaltimeArgs),
    /// Run a convergence-rate experiment.
    Rate(RateArgs),
    /// Check covariance bounds, decoupling scaling or auxiliary lemmas.
    VerifyBounds(VerifyArgs),
    /// Evaluate a closed-form oracle.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long = "H")]
    hurst: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    components: Option<String>,
    /// `fft` or `exact`.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
pub struct LocaltimeArgs {
    #[arg(long = "H")]
    hurst: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    t: Option<String>,
    /// Comma-separated levels.
    #[arg(long)]
    levels: Option<String>,
    /// `sign` or `bin`.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    paths: Option<String>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// `rate` or `localtime`.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    hurst: Option<String>,
    /// Resolutions, e.g. `64..2048` or `2^6..2^11`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    t: Option<String>,
    /// Component pair, e.g. `11` or `1,2`.
    #[arg(long)]
    pair: Option<String>,
    /// `delta:a`, `zero` or `measure:a1@m1,a2@m2`.
    #[arg(long)]
    integrand: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `cov`, `decoupling` or `lemmas`.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    hurst: Option<String>,
    /// Small-increment ratios, e.g. `2^-2..2^-7`.
    #[arg(long = "h-grid")]
    h_grid: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    functional: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// `a1` or `moments`.
    #[arg(long)]
    lemma: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long = "H")]
    hurst: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    p: Option<String>,
}

fn flags(pairs: &[(&str, &Option<String>)]) -> Vec<(String, String)> {
    pairs.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
}

impl Sub {
    fn split(&self) -> (Command, Vec<(String, String)>) {
        match self {
            Sub::Simulate(a) => (
                Command::Simulate,
                flags(&[("H", &a.hurst), ("n", &a.n), ("T", &a.horizon), ("t", &a.t), ("components", &a.components), ("method", &a.method)]),
            ),
            Sub::Localtime(a) => (
                Command::Localtime,
                flags(&[
                    ("H", &a.hurst),
                    ("n", &a.n),
                    ("t", &a.t),
                    ("levels", &a.levels),
                    ("estimator", &a.estimator),
                    ("eps", &a.eps),
                    ("paths", &a.paths),
                ]),
            ),
            Sub::Rate(a) => (
                Command::Rate,
                flags(&[
                    ("experiment", &a.experiment),
                    ("hurst", &a.hurst),
                    ("n", &a.n),
                    ("t", &a.t),
                    ("pair", &a.pair),
                    ("integrand", &a.integrand),
                    ("replicates", &a.replicates),
                ]),
            ),
            Sub::VerifyBounds(a) => (
                Command::VerifyBounds,
                flags(&[
                    ("suite", &a.suite),
                    ("hurst", &a.hurst),
                    ("h_grid", &a.h_grid),
                    ("samples", &a.samples),
                    ("functional", &a.functional),
                ]),
            ),
            Sub::Oracle(a) => (
                Command::Oracle,
                flags(&[("lemma", &a.lemma), ("theta", &a.theta), ("H", &a.hurst), ("t", &a.t), ("a", &a.a), ("p", &a.p)]),
            ),
        }
    }
}

impl Cli {
    /// Effective configuration: defaults, then `--config`, then `--set`, then flags.
    pub fn run_config(&self) -> Result<RunConfig> {
        let (command, flag_pairs) = self.command.split();
        let mut overrides = self.set.clone();
        overrides.extend(flag_pairs);
        RunConfig::build(command, self.config.as_deref(), overrides, self.output_dir.clone(), self.seed)
    }
}

/// Run the parsed command line and return the process exit code.
pub fn run(cli: Cli) -> u8 {
    match execute(&cli) {
        Ok(report) => {
            print!("{}", report.stdout);
            if !cli.quiet {
                for note in &report.notes {
                    eprintln!("{note}");
                }
            }
            report.outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<commands::Report> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let cfg = cli.run_config()?;
    commands::dispatch(&cfg)
}
