use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use twoweight_cli::{run_scenario, Scenario, Suite, THREADS_ENV};

/// Evaluate a scenario and write `report.json` and `report.md`.
#[derive(Parser, Debug)]
#[command(name = "twoweight", version)]
struct Args {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the corpus seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Restricts the run to these suites (repeatable).
    #[arg(long = "suite", value_parser = Suite::parse)]
    suites: Vec<Suite>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = (|| -> Result<bool> {
        configure_threads()?;
        let mut scenario = Scenario::load(&args.scenario)?;
        scenario.override_with(args.seed, &args.suites);
        scenario.validate()?;
        let report = run_scenario(&scenario)?;
        let (json, md) = report.write(&args.out)?;
        let _ = writeln!(std::io::stdout(), "{}", report.to_markdown());
        eprintln!("wrote {} and {}", json.display(), md.display());
        Ok(report.passed)
    })();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
