//! agesim command-line interface.
//!
//! Subcommands: `calibrate` (solve the aging constant K), `gen-trace`
//! (synthetic request trace CSV), `simulate` (run the policy x rate x seed
//! matrix), `report` (aggregate metrics over completed runs).
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use agesim::aging::{adf, advance_vth, calibrate_k, CoreState, YEAR_SECONDS};
use agesim::engine::{build_trace, run_simulation};
use agesim::error::SimError;
use agesim::metrics::CarbonParams;
use agesim::report::{cell_dir, read_cells, summarize, write_cell, write_report, CellMeta};
use agesim::workload::write_trace;
use agesim::ExperimentConfig;

#[derive(Parser)]
#[command(name = "agesim", version, about = "CPU core aging simulator for LLM inference clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fitting constant K from the configured calibration anchor.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Output file for the calibrated parameters JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic request trace CSV from the configured source.
    GenTrace {
        #[arg(long)]
        config: PathBuf,
        /// Output file for the trace CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Run the full policy x rate x seed experiment matrix.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Artifact root directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Matrix cells to run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Added to every configured seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Aggregate completed runs into per-policy metric CSVs and a JSON summary.
    Report {
        /// Config used for the runs (for the carbon machine count).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact root directory holding the completed runs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &SimError) -> u8 {
    match err {
        SimError::InvalidParams(_)
        | SimError::InvalidArgument(_)
        | SimError::Parse { .. }
        | SimError::Config(_) => 1,
        _ => 2,
    }
}

fn cmd_calibrate(config: &Path, out: Option<PathBuf>) -> Result<(), SimError> {
    let cfg = ExperimentConfig::load(config)?;
    let lifetime = cfg.calibration.lifetime_years * YEAR_SECONDS;
    let k = calibrate_k(cfg.calibration.target_drop, lifetime, &cfg.aging)?;
    let mut params = cfg.aging.clone();
    params.k_fit = k;
    params.validate()?;

    // Round-trip verification at the anchor.
    let a = adf(CoreState::ActiveAllocated, &params);
    let vth = advance_vth(0.0, a, lifetime, params.n_exp)?;
    let drop = vth / params.voltage_headroom();

    let out = out.unwrap_or_else(|| cfg.output_dir.join("calibrated_params.json"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| SimError::Config(format!("{}: {e}", parent.display())))?;
    }
    let json = serde_json::to_string_pretty(&params).expect("params serialize");
    std::fs::write(&out, json).map_err(|e| SimError::Config(format!("{}: {e}", out.display())))?;
    println!("k_fit = {k:.6e}");
    println!(
        "verification: {:.4}% frequency drop after {} years (target {:.4}%)",
        drop * 100.0,
        cfg.calibration.lifetime_years,
        cfg.calibration.target_drop * 100.0
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gen_trace(config: &Path, out: Option<PathBuf>, seed_offset: u64) -> Result<(), SimError> {
    let cfg = ExperimentConfig::load(config)?;
    let rate = cfg.rates[0];
    let seed = cfg.seeds[0].wrapping_add(seed_offset);
    let trace = build_trace(&cfg, rate, seed)?;
    let out = out.unwrap_or_else(|| cfg.output_dir.join("trace.csv"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| SimError::Config(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(&out, write_trace(&trace))
        .map_err(|e| SimError::Config(format!("{}: {e}", out.display())))?;
    println!("wrote {} requests to {}", trace.len(), out.display());
    Ok(())
}

fn cmd_simulate(
    config: &Path,
    out: Option<PathBuf>,
    parallel: usize,
    seed_offset: u64,
) -> Result<(), SimError> {
    let cfg = ExperimentConfig::load(config)?;
    // Fail on a missing trace file before any cell runs.
    if let agesim::config::TraceSource::File { path } = &cfg.trace {
        if !path.exists() {
            return Err(SimError::Config(format!(
                "trace file {} does not exist",
                path.display()
            )));
        }
    }
    let root = out.unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&root)
        .map_err(|e| SimError::Config(format!("{}: {e}", root.display())))?;
    std::fs::write(root.join("config.json"), cfg.to_json())
        .map_err(|e| SimError::Config(format!("{}: {e}", root.display())))?;
    let hash = cfg.hash();

    let mut cells = Vec::new();
    for &policy in &cfg.policies {
        for &rate in &cfg.rates {
            for &seed in &cfg.seeds {
                cells.push((policy, rate, seed.wrapping_add(seed_offset)));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| SimError::Internal(e.to_string()))?;
    let results: Vec<Result<(), SimError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(policy, rate, seed)| {
                let trace = build_trace(&cfg, rate, seed)?;
                let res = run_simulation(&cfg, policy, &trace, seed)?;
                let meta = CellMeta {
                    policy,
                    rate,
                    seed,
                    config_hash: hash.clone(),
                    end_time: res.end_time,
                    tasks_total: res.tasks_total,
                    tasks_completed: res.tasks_completed,
                };
                write_cell(&cell_dir(&root, policy, rate, seed), &meta, &res)?;
                Ok(())
            })
            .collect()
    });
    for (cell, result) in cells.iter().zip(&results) {
        if let Err(e) = result {
            return Err(SimError::Internal(format!(
                "cell (policy={}, rate={}, seed={}) failed: {e}",
                cell.0, cell.1, cell.2
            )));
        }
    }
    println!("completed {} cells under {}", cells.len(), root.display());
    Ok(())
}

fn cmd_report(config: Option<PathBuf>, out: &Path) -> Result<(), SimError> {
    let carbon = match config {
        Some(path) => {
            let cfg = ExperimentConfig::load(&path)?;
            CarbonParams { machines: cfg.cluster.machines, ..CarbonParams::default() }
        }
        None => CarbonParams::default(),
    };
    let cells = read_cells(out)?;
    let summary = summarize(&cells, &carbon)?;
    let report_dir = out.join("report");
    write_report(&report_dir, &summary)?;
    for p in &summary.policies {
        println!(
            "{}: cv_p50={:.6} deg_p50={:.6} idle_p90={:.4} min_idle={:.4} carbon_reduction={}",
            p.policy,
            p.freq_cv_p50,
            p.mean_degradation_p50,
            p.normalized_idle_p90,
            p.normalized_idle_min,
            p.carbon_reduction_vs_linux
                .map(|v| format!("{:.2}%", v * 100.0))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    println!("wrote report to {}", report_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate { config, out } => cmd_calibrate(&config, out),
        Command::GenTrace { config, out, seed_offset } => {
            cmd_gen_trace(&config, out, seed_offset)
        }
        Command::Simulate { config, out, parallel, seed_offset } => {
            cmd_simulate(&config, out, parallel, seed_offset)
        }
        Command::Report { config, out } => cmd_report(config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
