use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lgbf_bench::{emit_artifacts, run_benchmark, BenchError, ScenarioConfig};

#[derive(Parser)]
#[command(name = "lgbf-bench", about = "Monte Carlo benchmark for grid-based TAN filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark scenario and write report artifacts.
    Run(RunArgs),
    /// Print the default synthetic scenario as JSON (a config template).
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; omitted means the built-in synthetic scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json, summary.csv and traces/.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated filter roster override.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<String>>,
    /// Monte Carlo run count override.
    #[arg(long)]
    mc: Option<usize>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Report wall times as 0.0 (for byte-identical reports across runs).
    #[arg(long)]
    no_timing: bool,
    /// Large-grid preset: 101^4 CPD grid, 51x51x41x41 dense grid. Slow for
    /// the dense baseline.
    #[arg(long)]
    large_scale: bool,
}

fn run(args: RunArgs) -> Result<(), BenchError> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_path(path)?,
        None => ScenarioConfig::default_synthetic(),
    };
    if let Some(filters) = args.filters {
        cfg.filters = filters;
    }
    if let Some(mc) = args.mc {
        cfg.mc_runs = mc;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.no_timing {
        cfg.timing = false;
    }
    if args.large_scale {
        cfg.grid_counts = [101, 101, 101, 101];
        cfg.dense_counts = Some([51, 51, 41, 41]);
    }
    cfg.validate()?;

    let report = run_benchmark(&cfg)?;
    emit_artifacts(&report, &args.out)?;
    for f in &report.filters {
        println!(
            "{}: pos RMSE {:.3} m, vel RMSE {:.3} m/s, mean step {:.6} s, divergences {}",
            f.name, f.rmse_pos_m, f.rmse_vel_mps, f.mean_step_s, f.divergences
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::DefaultConfig => {
            let cfg = ScenarioConfig::default_synthetic();
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serialises")
            );
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e @ BenchError::UniversalDivergence) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
            Err(e @ (BenchError::Config(_) | BenchError::Json(_))) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
