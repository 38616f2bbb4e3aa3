//! Batch experiment front end for robust beamsplitter pulse synthesis.

mod config;
mod pulsefile;
mod recipes;
mod report;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{validate_config, ExperimentConfig, Recipe};

#[derive(Parser)]
#[command(
    name = "braggsynth",
    about = "Robust minimum-energy Bragg beamsplitter pulse synthesis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Configuration file (TOML); flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds for the pulse initialization (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory for pulses, reports and CSV data.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Target half-momentum index n0.
    #[arg(long)]
    n0: Option<usize>,
    /// Expansion degrees per parameter, e.g. 3,3.
    #[arg(long, value_delimiter = ',')]
    degrees: Vec<usize>,
    /// Sample counts per parameter for sampling mode, e.g. 4,4
    /// (for compare: the list of sampling sizes).
    #[arg(long, value_delimiter = ',')]
    samples: Vec<usize>,
    /// Maximum control amplitude u/omega_r.
    #[arg(long)]
    bound: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a pulse at the configured design point (one run per seed).
    Synth(CommonArgs),
    /// Warm-started ladder of beamsplitters up to the target index.
    Ladder(CommonArgs),
    /// Evaluate a stored pulse on the robustness verification grid.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Pulse file to verify.
        #[arg(long)]
        pulse: PathBuf,
    },
    /// Butterworth bandwidth sweep of a stored pulse.
    Filtersweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Pulse file to filter and re-simulate.
        #[arg(long)]
        pulse: PathBuf,
    },
    /// Compare Legendre expansion against equidistant sampling.
    Compare(CommonArgs),
}

fn apply_overrides(cfg: &mut ExperimentConfig, recipe: Recipe, args: &CommonArgs) -> Result<()> {
    cfg.recipe = Some(recipe);
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(n0) = args.n0 {
        cfg.bragg.n0 = n0;
    }
    if let Some(b) = args.bound {
        cfg.bragg.amplitude_bound = b;
    }
    match recipe {
        Recipe::Compare => {
            if !args.degrees.is_empty() {
                cfg.compare.degrees = args.degrees.clone();
            }
            if !args.samples.is_empty() {
                cfg.compare.samples = args.samples.clone();
            }
        }
        _ => {
            if !args.degrees.is_empty() {
                anyhow::ensure!(
                    args.degrees.len() == 2,
                    "--degrees expects two values d1,d2"
                );
                cfg.bragg.degrees = [args.degrees[0], args.degrees[1]];
            }
            if !args.samples.is_empty() {
                anyhow::ensure!(
                    args.samples.len() == 2,
                    "--samples expects two values s1,s2"
                );
                cfg.bragg.degrees = [
                    args.samples[0].saturating_sub(1),
                    args.samples[1].saturating_sub(1),
                ];
                cfg.bragg.mode = "sampling".to_string();
            }
        }
    }
    Ok(())
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    match &args.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (recipe, common, pulse) = match &cli.command {
        Command::Synth(c) => (Recipe::Robust, c.clone(), None),
        Command::Ladder(c) => (Recipe::Ladder, c.clone(), None),
        Command::Compare(c) => (Recipe::Compare, c.clone(), None),
        Command::Verify { common, pulse } => (Recipe::Verify, common.clone(), Some(pulse.clone())),
        Command::Filtersweep { common, pulse } => {
            (Recipe::Filtersweep, common.clone(), Some(pulse.clone()))
        }
    };
    let mut cfg = load_config(&common)?;
    apply_overrides(&mut cfg, recipe, &common)?;
    let diags = validate_config(&cfg);
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("config error: {d}");
        }
        anyhow::bail!("invalid configuration ({} problem(s))", diags.len());
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    recipes::run_recipe(&cfg, recipe, pulse.as_deref())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
