//! `lqcharge`: run charging scenarios and write CSV traces.
//!
//! All data goes to files; diagnostics and logs go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::info;

use lqcharge::sim::{
    compare_strategies, emit_csv, emit_gain_table, emit_summary, gain_table, load_scenario_dir,
    plan_scenario, run_scenario, Scenario,
};

#[derive(Debug, Parser)]
#[command(
    name = "lqcharge",
    version,
    about = "Simulate health-aware LQ battery charging strategies"
)]
struct Cli {
    /// Override the noise seed of every scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its per-step trace.
    Run {
        scenario: PathBuf,
        /// Defaults to `<scenario stem>.csv` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every `*.toml` scenario in a directory and write a summary table.
    Compare {
        dir: PathBuf,
        #[arg(long, default_value = "summary.csv")]
        out: PathBuf,
    },
    /// Write the planned gain schedule of a scenario.
    Gains {
        scenario: PathBuf,
        /// Defaults to `<scenario stem>-gains.csv` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_out(scenario: &Path, suffix: &str) -> PathBuf {
    let stem = scenario
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace");
    PathBuf::from(format!("{stem}{suffix}.csv"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.noise.seed = seed;
    }
    Ok(scenario)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, out } => {
            let sc = load(&scenario, cli.seed)?;
            let (trace, m) = run_scenario(&sc)?;
            let out = out.unwrap_or_else(|| default_out(&scenario, ""));
            emit_csv(&trace, &out)?;
            info!(
                "{}: {} rows, final SoC {:.6} (target {}), max |health| {:.3e} V -> {}",
                sc.name,
                trace.rows.len(),
                m.final_soc,
                m.target_soc,
                m.max_abs_health_v,
                out.display()
            );
        }
        Command::Compare { dir, out } => {
            let mut scenarios = load_scenario_dir(&dir)?;
            if let Some(seed) = cli.seed {
                for s in &mut scenarios {
                    s.noise.seed = seed;
                }
            }
            let cmp = compare_strategies(&scenarios)?;
            emit_summary(&cmp, &out)?;
            for row in &cmp.rows {
                info!(
                    "{:<24} {:<16} final SoC {:.4}  Q4 |health| {:.3e} V{}",
                    row.name,
                    row.strategy,
                    row.metrics.final_soc,
                    row.metrics.quarter_mean_abs_health_v[3],
                    row.health_vs_baseline
                        .map(|r| format!("  ({:.1}% of baseline)", 100.0 * r))
                        .unwrap_or_default()
                );
            }
            info!("{} scenarios -> {}", cmp.rows.len(), out.display());
        }
        Command::Gains { scenario, out } => {
            let sc = load(&scenario, cli.seed)?;
            let planned = plan_scenario(&sc)?;
            let table = gain_table(&planned);
            let out = out.unwrap_or_else(|| default_out(&scenario, "-gains"));
            emit_gain_table(&table, &out)?;
            info!(
                "{}: {} gain rows -> {}",
                sc.name,
                table.rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lqcharge: error: {e}");
            ExitCode::FAILURE
        }
    }
}
