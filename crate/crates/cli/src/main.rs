use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matchsim::config::{parse_config, ExperimentSpec, Mode};
use matchsim::experiment::run_experiment;

/// Repeated school-choice markets with prediction attacks.
#[derive(Parser)]
#[command(name = "matchsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured market (schools in `strategic_schools` attack).
    Simulate(Common),
    /// All truthful versus one school attacking.
    Deviation(Common),
    /// Round-robin best response over the action set.
    BestResponse(Common),
    /// One scenario per cell of the `grid_*` keys.
    Sweep(Common),
    /// Student welfare over attack levels of the first two schools.
    WelfareGrid(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds (overrides `seeds`).
    #[arg(long)]
    seeds: Option<usize>,
}

fn load(mode: Mode, args: &Common) -> matchsim::Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => parse_config(path).map_err(|e| match e {
            matchsim::Error::Io(io) => {
                matchsim::Error::config("--config", format!("{}: {io}", path.display()))
            }
            e => e,
        })?,
        None => ExperimentSpec::default(),
    };
    spec.mode = mode;
    if let Some(seed) = args.seed {
        spec.set("seed", &seed.to_string())?;
    }
    if let Some(seeds) = args.seeds {
        spec.set("seeds", &seeds.to_string())?;
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Deviation(a) => (Mode::Deviation, a),
        Command::BestResponse(a) => (Mode::BestResponse, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::WelfareGrid(a) => (Mode::WelfareGrid, a),
    };
    let spec = match load(mode, args) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run_experiment(&spec, &args.out, &mut std::io::stdout().lock()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
