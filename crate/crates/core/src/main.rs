use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use strange_reservoir::experiments::{self, ExperimentConfig, ExperimentResult, Preset};

const SEED_ENV: &str = "STRANGE_RESERVOIR_SEED";

#[derive(Parser)]
#[command(name = "strange-reservoir", version, about = "Reservoir embeddings of Rössler, Van der Pol and Lorenz dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attractor reconstruction from one observed coordinate
    Reconstruct(RunArgs),
    /// Van der Pol limit cycles over a grid of damping values
    VdpSweep(RunArgs),
    /// Noisy one-step-ahead forecasting with a trained readout
    Forecast(RunArgs),
    /// Reachability, echo state, immersion and injectivity checks
    Diagnose(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides both the config seed and $STRANGE_RESERVOIR_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

fn resolve_seed(flag: Option<u64>, env: Option<String>, config: u64) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer")),
        None => Ok(config),
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    cfg.seed = resolve_seed(args.seed, std::env::var(SEED_ENV).ok(), cfg.seed)?;
    if let Some(dir) = &args.out_dir {
        cfg.output.dir = dir.clone();
    }
    cfg.apply_preset(match args.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    });
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn summarize(r: &ExperimentResult) {
    println!("{} (seed {}) finished in {:.2} s", r.experiment, r.config.seed, r.wall_seconds);
    for (k, v) in &r.metrics {
        println!("  {k} = {v}");
    }
    for d in &r.diagnostics {
        println!("  {d}");
    }
    for p in &r.outputs {
        println!("  wrote {}", p.display());
    }
    if r.passed() {
        println!("PASS");
    } else {
        for f in &r.failures {
            println!("  failure: {f}");
        }
        println!("FAIL");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, runner): (&RunArgs, fn(&ExperimentConfig) -> experiments::Result<ExperimentResult>) = match &cli.command {
        Command::Reconstruct(a) => (a, experiments::run_reconstruct),
        Command::VdpSweep(a) => (a, experiments::run_vdp_sweep),
        Command::Forecast(a) => (a, experiments::run_forecast),
        Command::Diagnose(a) => (a, experiments::run_diagnose),
    };
    let outcome = load(args).and_then(|cfg| runner(&cfg).map_err(|e| e.to_string()));
    match outcome {
        Ok(r) => {
            summarize(&r);
            if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
