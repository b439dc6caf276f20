//! Experiment runner CLI.
//!
//! Subcommands mirror the pipeline stages. `run` executes the whole
//! pipeline; the staged commands (`simulate`, `estimate`, `metrics`,
//! `vepd`, `report`) operate on the artifacts of the previous stage so
//! populations can be regenerated or re-scored independently. `replay`
//! mixes a recorded run log with a freshly simulated IMU stream.
//!
//! Exit code is 0 on success and nonzero on any validation error or
//! failed run.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vepd_core::dataset::{load_run, replay_mix, save_run};
use vepd_core::experiment::{
    derive_run_seed, run_experiment, stage_estimate, stage_metrics, stage_report, stage_simulate,
    stage_vepd, ExperimentConfig, ExperimentReport, VariantComparison, VepdTables,
};

#[derive(Parser)]
#[command(
    name = "vepd",
    version,
    about = "Simulate GPS/IMU sensor variants, judge them with an EKF, and score the gap between run populations with the VEPD metric"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: simulate, estimate, metrics, report.
    Run(ConfigArgs),
    /// Generate run logs for every (population, scenario, k).
    Simulate(ConfigArgs),
    /// Run the EKF judge over persisted run logs.
    Estimate(ConfigArgs),
    /// Compute per-run RMSE / entropy scores from logs and estimates.
    Metrics(ConfigArgs),
    /// Compare populations and write vepd.json.
    Vepd(ConfigArgs),
    /// Assemble report.json and the CSV tables from persisted scores.
    Report(ConfigArgs),
    /// Relay a recorded GPS channel alongside a freshly simulated IMU.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (JSON). Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker thread count (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| format!("invalid config {}: {e}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Input run log (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Output path for the mixed run log.
    #[arg(long)]
    output: PathBuf,
}

fn print_table(label: &str, rows: &[VariantComparison]) {
    println!("{label}");
    println!("  {:<18} {:>10} {:>10} {:>10} {:>5}", "variant", "W1", "W2", "VEPD", "rank");
    for row in rows {
        println!(
            "  {:<18} {:>10.4} {:>10.4} {:>10.4} {:>5}",
            row.variant, row.report.w1, row.report.w2, row.report.vepd, row.rank
        );
    }
}

fn print_tables(tables: &VepdTables) {
    print_table("overall (all scenarios pooled)", &tables.overall);
    for table in &tables.per_scenario {
        print_table(&format!("scenario: {}", table.scenario), &table.rows);
    }
}

fn finish_report(report: &ExperimentReport) -> Result<(), String> {
    print_tables(&report.tables);
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if report.failed_runs > 0 {
        return Err(format!("{} run(s) failed", report.failed_runs));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
            println!(
                "completed {} runs into {}",
                (cfg.variants.len() + 1) * cfg.scenarios.len() * cfg.runs_per_scenario,
                cfg.output_dir.display()
            );
            finish_report(&report)
        }
        Command::Simulate(args) => {
            let cfg = args.load()?;
            stage_simulate(&cfg).map_err(|e| e.to_string())?;
            println!(
                "simulated {} runs into {}",
                (cfg.variants.len() + 1) * cfg.scenarios.len() * cfg.runs_per_scenario,
                cfg.output_dir.join("runs").display()
            );
            Ok(())
        }
        Command::Estimate(args) => {
            let cfg = args.load()?;
            stage_estimate(&cfg).map_err(|e| e.to_string())?;
            println!("estimates written to {}", cfg.output_dir.join("estimates").display());
            Ok(())
        }
        Command::Metrics(args) => {
            let cfg = args.load()?;
            stage_metrics(&cfg).map_err(|e| e.to_string())?;
            println!("scores written to {}", cfg.output_dir.join("scores").display());
            Ok(())
        }
        Command::Vepd(args) => {
            let cfg = args.load()?;
            let tables = stage_vepd(&cfg).map_err(|e| e.to_string())?;
            print_tables(&tables);
            println!("comparison written to {}", cfg.output_dir.join("vepd.json").display());
            Ok(())
        }
        Command::Report(args) => {
            let cfg = args.load()?;
            let report = stage_report(&cfg).map_err(|e| e.to_string())?;
            println!("report written to {}", cfg.output_dir.join("report.json").display());
            finish_report(&report)
        }
        Command::Replay(args) => {
            let cfg = args.config.load()?;
            let log = load_run(&args.input).map_err(|e| e.to_string())?;
            let seed = args.config.seed.unwrap_or_else(|| {
                derive_run_seed(
                    cfg.master_seed,
                    "replay",
                    cfg.reference.variant,
                    &log.meta.scenario,
                    log.meta.seed as usize,
                )
            });
            let (gps, imu) = replay_mix(&log, &cfg.sensors.imu, seed).map_err(|e| e.to_string())?;
            let mut mixed = log;
            mixed.meta.variant = "sim_imu_real_gps".into();
            mixed.meta.seed = seed;
            mixed.gps = gps;
            mixed.imu = imu;
            save_run(&mixed, &args.output).map_err(|e| e.to_string())?;
            println!(
                "mixed log written to {} (IMU re-simulated with seed {seed})",
                args.output.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
