//! Command-line front end: one subcommand per task, JSON configs, and
//! deterministic report emission.
//!
//! Exit codes: 0 success, 1 verification failure or internal error,
//! 2 invalid config, 3 non-convergence, 4 threshold violated,
//! 5 rational fit diverged.

use clap::{Args, Parser, Subcommand};
use ruelle_lab::cli::{apply_overrides, ExperimentConfig};
use ruelle_lab::Error;
use serde_json::Value;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ruelle-lab",
    about = "Numerical laboratory for transfer-operator spectra of hyperbolic flows",
    version
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the growth factors and their continuation threshold.
    Threshold(TaskArgs),
    /// Build the escape weight on a cosphere grid and verify monotonicity.
    Weight(TaskArgs),
    /// Build a multiplier symbol with verified definiteness margins.
    Multiplier(TaskArgs),
    /// Locate a growth factor by bisecting the multiplier inequality.
    Bisection(TaskArgs),
    /// Scan for resonance poles of the Laplace-transformed correlation.
    Resonance(TaskArgs),
    /// Evaluate correlations (optionally cross-checked by quadrature).
    Correlation(TaskArgs),
    /// Run the cross-module invariant suite.
    Verify(TaskArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Threshold(_) => "threshold",
            Command::Weight(_) => "weight",
            Command::Multiplier(_) => "multiplier",
            Command::Bisection(_) => "bisection",
            Command::Resonance(_) => "resonance",
            Command::Correlation(_) => "correlation",
            Command::Verify(_) => "verify",
        }
    }

    fn args(&self) -> &TaskArgs {
        match self {
            Command::Threshold(a)
            | Command::Weight(a)
            | Command::Multiplier(a)
            | Command::Bisection(a)
            | Command::Resonance(a)
            | Command::Correlation(a)
            | Command::Verify(a) => a,
        }
    }
}

#[derive(Args)]
struct TaskArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override config fields after validation, e.g. --set task_params.m_u=-2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the report directory.
    #[arg(long)]
    output_dir: Option<String>,
    /// Worker threads (falls back to RUELLE_LAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(command: &Command) -> Result<Value, Error> {
    let args = command.args();
    let threads = args.threads.or_else(|| {
        std::env::var("RUELLE_LAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // a failure here just means a pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let text = std::fs::read_to_string(&args.config)?;
    // schema validation first, then overrides, then full revalidation
    let _ = ExperimentConfig::from_json(&text)?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config("/", e.to_string()))?;
    apply_overrides(&mut doc, &args.sets)?;
    if let Some(dir) = &args.output_dir {
        apply_overrides(&mut doc, &[format!("output_dir={dir}")])?;
    }
    if let Some(seed) = args.seed {
        apply_overrides(&mut doc, &[format!("seed={seed}")])?;
    }
    let config = ExperimentConfig::from_json(&serde_json::to_string(&doc).expect("valid json"))?;
    let task = config.task_spec()?;
    if task.name() != command.name() {
        return Err(Error::config(
            "/task",
            format!(
                "config declares task '{}' but the '{}' subcommand was invoked",
                task.name(),
                command.name()
            ),
        ));
    }
    let artifacts = ruelle_lab::cli::run(&config)?;
    Ok(artifacts.report)
}

fn main() -> ExitCode {
    let cli = CliArgs::parse();
    match execute(&cli.command) {
        Ok(report) => {
            // verification failures surface through the exit status
            if let Some(results) = report.get("results") {
                if results.get("passed") == Some(&Value::Bool(false)) {
                    eprintln!("verification failed: {}", results["failed"]);
                    return ExitCode::from(1);
                }
            }
            println!("{}", ruelle_lab::cli::to_deterministic_json(&report));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
