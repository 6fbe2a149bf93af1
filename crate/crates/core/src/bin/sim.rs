use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use insectloc::experiment::{emit_csv, run_experiment, ExperimentName, ExperimentSpec};
use insectloc::scenario::{load_scenario, Scenario, SweepMode};

/// Run a seeded experiment and write its result table as CSV.
#[derive(Debug, Parser)]
#[command(name = "sim", version)]
struct Args {
    /// multipath-grid, range-sweep, farm-cdf, speed-sweep, ber-vs-snr,
    /// mac-session or power-report
    experiment: ExperimentName,
    /// Scenario TOML; the built-in farm layout when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u64>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// alg1 (steering) or uniform-theta; overrides the scenario.
    #[arg(long)]
    mode: Option<SweepMode>,
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: Args) -> insectloc::Result<()> {
    let scenario = match &args.scenario {
        Some(path) => load_scenario(&std::fs::read_to_string(path)?)?,
        None => Scenario::farm(),
    };
    let trials = args.trials.unwrap_or(args.experiment.default_trials());
    let mut spec = ExperimentSpec::new(args.experiment, scenario, trials);
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(mode) = args.mode {
        spec.mode = mode;
    }
    spec.workers = args.workers;
    let table = run_experiment(&spec)?;
    emit_csv(&table, &args.out)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sim: {e}");
            ExitCode::FAILURE
        }
    }
}
