//! Run artifacts and aggregate reports.
//!
//! A simulate invocation writes one directory per matrix cell
//! (`<out>/<policy>/rate_<r>/seed_<s>/`) holding the final core states, the
//! metric sample series, the optional event and idling logs, and a metadata
//! JSON with the config hash. `report` reads the cells back and aggregates
//! the paper's metrics per policy.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Policy;
use crate::engine::RunResult;
use crate::error::{Result, SimError};
use crate::metrics::{
    estimate_yearly_embodied, frequency_cv, mean_degradation, normalized_idle_series,
    percentile, CarbonParams, MetricSample,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMeta {
    pub policy: Policy,
    pub rate: f64,
    pub seed: u64,
    pub config_hash: String,
    pub end_time: f64,
    pub tasks_total: usize,
    pub tasks_completed: usize,
}

/// One completed cell read back from disk.
#[derive(Debug, Clone)]
pub struct Cell {
    pub meta: CellMeta,
    /// Per machine: (f0, frequency) per core.
    pub cores: Vec<Vec<(f64, f64)>>,
    pub samples: Vec<MetricSample>,
}

fn io_err(path: &Path, e: std::io::Error) -> SimError {
    SimError::Config(format!("{}: {e}", path.display()))
}

/// Directory name for a cell, stable across reruns.
pub fn cell_dir(root: &Path, policy: Policy, rate: f64, seed: u64) -> PathBuf {
    root.join(policy.as_str()).join(format!("rate_{rate}")).join(format!("seed_{seed}"))
}

pub fn final_cores_csv(cores: &[crate::engine::FinalCore]) -> String {
    let mut out = String::from("core_id,f0,vth_shift,frequency\n");
    for c in cores {
        out.push_str(&format!("{},{},{},{}\n", c.core_id, c.f0, c.vth_shift, c.frequency));
    }
    out
}

pub fn samples_csv(samples: &[MetricSample]) -> String {
    let mut out = String::from("t,machine,n_total,n_idle,n_running\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.t, s.machine, s.n_total, s.n_idle, s.n_running
        ));
    }
    out
}

pub fn events_csv(events: &[crate::engine::EventRecord]) -> String {
    let mut out = String::from("t,machine,kind,task,core\n");
    for e in events {
        let task = e.task.map(|t| t.to_string()).unwrap_or_default();
        let core = e.core.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", e.t, e.machine, e.kind, task, core));
    }
    out
}

pub fn idling_csv(records: &[crate::engine::IdlingRecord]) -> String {
    let mut out = String::from("t,machine,n,c_slp,total_tasks,e,f,e_corr\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t, r.machine, r.n, r.c_slp, r.total_tasks, r.e_norm, r.reaction, r.e_corr
        ));
    }
    out
}

/// Write every artifact of one cell under `dir`.
pub fn write_cell(dir: &Path, meta: &CellMeta, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (machine, cores) in result.machines.iter().enumerate() {
        let path = dir.join(format!("final_cores_m{machine}.csv"));
        fs::write(&path, final_cores_csv(cores)).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("samples.csv");
    fs::write(&path, samples_csv(&result.samples)).map_err(|e| io_err(&path, e))?;
    if !result.events.is_empty() {
        let path = dir.join("events.csv");
        fs::write(&path, events_csv(&result.events)).map_err(|e| io_err(&path, e))?;
    }
    if !result.idling.is_empty() {
        let path = dir.join("idling.csv");
        fs::write(&path, idling_csv(&result.idling)).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn parse_final_cores(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "core_id,f0,vth_shift,frequency" => {}
        _ => {
            return Err(SimError::Parse {
                line: 1,
                message: format!("{}: expected final-core header", path.display()),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(SimError::Parse { line: idx + 1, message: "expected 4 fields".into() });
        }
        let f0: f64 = parts[1].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad f0".into(),
        })?;
        let freq: f64 = parts[3].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad frequency".into(),
        })?;
        out.push((f0, freq));
    }
    Ok(out)
}

fn parse_samples(text: &str, path: &Path) -> Result<Vec<MetricSample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,machine,n_total,n_idle,n_running" => {}
        _ => {
            return Err(SimError::Parse {
                line: 1,
                message: format!("{}: expected sample header", path.display()),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(SimError::Parse { line: idx + 1, message: "expected 5 fields".into() });
        }
        let bad = |m: &str| SimError::Parse { line: idx + 1, message: m.into() };
        out.push(MetricSample {
            t: parts[0].trim().parse().map_err(|_| bad("bad t"))?,
            machine: parts[1].trim().parse().map_err(|_| bad("bad machine"))?,
            n_total: parts[2].trim().parse().map_err(|_| bad("bad n_total"))?,
            n_idle: parts[3].trim().parse().map_err(|_| bad("bad n_idle"))?,
            n_running: parts[4].trim().parse().map_err(|_| bad("bad n_running"))?,
        });
    }
    Ok(out)
}

fn read_cell(dir: &Path) -> Result<Cell> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: CellMeta =
        serde_json::from_str(&meta_text).map_err(|e| SimError::Config(e.to_string()))?;
    let mut cores = Vec::new();
    for machine in 0.. {
        let path = dir.join(format!("final_cores_m{machine}.csv"));
        if !path.exists() {
            break;
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        cores.push(parse_final_cores(&text, &path)?);
    }
    if cores.is_empty() {
        return Err(SimError::Config(format!("{}: no final-core CSVs", dir.display())));
    }
    let path = dir.join("samples.csv");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let samples = parse_samples(&text, &path)?;
    Ok(Cell { meta, cores, samples })
}

/// Find and read every completed cell (directory holding a meta.json) under
/// `root`.
pub fn read_cells(root: &Path) -> Result<Vec<Cell>> {
    let mut dirs = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("meta.json").exists() {
            dirs.push(dir);
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            if entry.path().is_dir() {
                stack.push(entry.path());
            }
        }
    }
    if dirs.is_empty() {
        return Err(SimError::Config(format!("{}: no completed runs found", root.display())));
    }
    dirs.sort();
    dirs.iter().map(|d| read_cell(d)).collect()
}

/// Aggregated metrics for one policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub cells: usize,
    /// Percentiles over per-machine frequency CVs, pooled across cells.
    pub freq_cv_p1: f64,
    pub freq_cv_p50: f64,
    pub freq_cv_p90: f64,
    pub freq_cv_p99: f64,
    /// Cluster mean degradation per cell, then percentiled.
    pub mean_degradation_p50: f64,
    pub mean_degradation_mean: f64,
    /// Pooled normalized-idle percentiles over every sample of every cell.
    pub normalized_idle_p1: f64,
    pub normalized_idle_p50: f64,
    pub normalized_idle_p90: f64,
    pub normalized_idle_min: f64,
    /// Oversubscription never exceeded 10% of the cores at any sample.
    pub min_normalized_idle_above_neg_0_1: bool,
    /// Yearly embodied carbon under the linear lifetime-extension model.
    pub carbon_yearly_kg: Option<f64>,
    pub carbon_reduction_vs_linux: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub policies: Vec<PolicySummary>,
}

/// Aggregate completed cells into the per-policy report.
pub fn summarize(cells: &[Cell], carbon: &CarbonParams) -> Result<Summary> {
    if cells.is_empty() {
        return Err(SimError::Config("no cells to summarize".into()));
    }
    let config_hash = cells[0].meta.config_hash.clone();
    let mut policies: Vec<Policy> = cells.iter().map(|c| c.meta.policy).collect();
    policies.sort_by_key(|p| *p as u8);
    policies.dedup();

    // Per-policy p50 of cluster mean degradation, for the carbon comparison.
    let deg_p50 = |policy: Policy| -> Result<f64> {
        let degs: Vec<f64> = cells
            .iter()
            .filter(|c| c.meta.policy == policy)
            .map(|c| {
                let f0s: Vec<f64> =
                    c.cores.iter().flatten().map(|(f0, _)| *f0).collect();
                let fs: Vec<f64> = c.cores.iter().flatten().map(|(_, f)| *f).collect();
                mean_degradation(&f0s, &fs)
            })
            .collect::<Result<_>>()?;
        Ok(percentile(&degs, 50.0))
    };
    let linux_deg = if policies.contains(&Policy::Linux) {
        Some(deg_p50(Policy::Linux)?)
    } else {
        None
    };

    let mut out = Vec::new();
    for policy in policies {
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.meta.policy == policy).collect();
        let mut cvs = Vec::new();
        let mut degs = Vec::new();
        let mut samples = Vec::new();
        for cell in &mine {
            for machine in &cell.cores {
                let fs: Vec<f64> = machine.iter().map(|(_, f)| *f).collect();
                cvs.push(frequency_cv(&fs)?);
            }
            let f0s: Vec<f64> = cell.cores.iter().flatten().map(|(f0, _)| *f0).collect();
            let fs: Vec<f64> = cell.cores.iter().flatten().map(|(_, f)| *f).collect();
            degs.push(mean_degradation(&f0s, &fs)?);
            samples.extend(cell.samples.iter().copied());
        }
        let idle = normalized_idle_series(&samples)?;
        let deg_self = percentile(&degs, 50.0);
        let (carbon_yearly, carbon_reduction) = match linux_deg.or(Some(deg_self)) {
            Some(linux) if deg_self > 0.0 && linux > 0.0 => {
                let (yearly, reduction) = estimate_yearly_embodied(deg_self, linux, carbon)?;
                (Some(yearly), Some(reduction))
            }
            _ => (None, None),
        };
        out.push(PolicySummary {
            policy,
            cells: mine.len(),
            freq_cv_p1: percentile(&cvs, 1.0),
            freq_cv_p50: percentile(&cvs, 50.0),
            freq_cv_p90: percentile(&cvs, 90.0),
            freq_cv_p99: percentile(&cvs, 99.0),
            mean_degradation_p50: deg_self,
            mean_degradation_mean: degs.iter().sum::<f64>() / degs.len() as f64,
            normalized_idle_p1: idle.p1,
            normalized_idle_p50: idle.p50,
            normalized_idle_p90: idle.p90,
            normalized_idle_min: idle.min,
            min_normalized_idle_above_neg_0_1: idle.min >= -0.1,
            carbon_yearly_kg: carbon_yearly,
            carbon_reduction_vs_linux: carbon_reduction,
        });
    }
    Ok(Summary { config_hash, policies: out })
}

/// One CSV per metric: percentile rows, one column per policy.
pub fn summary_csvs(summary: &Summary) -> Vec<(&'static str, String)> {
    let header: String = summary
        .policies
        .iter()
        .map(|p| p.policy.as_str())
        .collect::<Vec<_>>()
        .join(",");
    let row = |name: &str, f: &dyn Fn(&PolicySummary) -> String| -> String {
        let vals: Vec<String> = summary.policies.iter().map(f).collect();
        format!("{name},{}\n", vals.join(","))
    };
    let mut files = Vec::new();

    let mut cv = format!("percentile,{header}\n");
    cv.push_str(&row("p1", &|p| p.freq_cv_p1.to_string()));
    cv.push_str(&row("p50", &|p| p.freq_cv_p50.to_string()));
    cv.push_str(&row("p90", &|p| p.freq_cv_p90.to_string()));
    cv.push_str(&row("p99", &|p| p.freq_cv_p99.to_string()));
    files.push(("frequency_cv.csv", cv));

    let mut deg = format!("statistic,{header}\n");
    deg.push_str(&row("p50", &|p| p.mean_degradation_p50.to_string()));
    deg.push_str(&row("mean", &|p| p.mean_degradation_mean.to_string()));
    files.push(("mean_degradation.csv", deg));

    let mut idle = format!("statistic,{header}\n");
    idle.push_str(&row("p1", &|p| p.normalized_idle_p1.to_string()));
    idle.push_str(&row("p50", &|p| p.normalized_idle_p50.to_string()));
    idle.push_str(&row("p90", &|p| p.normalized_idle_p90.to_string()));
    idle.push_str(&row("min", &|p| p.normalized_idle_min.to_string()));
    idle.push_str(&row("min_above_-0.1", &|p| {
        p.min_normalized_idle_above_neg_0_1.to_string()
    }));
    files.push(("normalized_idle.csv", idle));

    let mut carbon = format!("statistic,{header}\n");
    carbon.push_str(&row("yearly_kgco2eq", &|p| {
        p.carbon_yearly_kg.map(|v| v.to_string()).unwrap_or_default()
    }));
    carbon.push_str(&row("reduction_vs_linux", &|p| {
        p.carbon_reduction_vs_linux.map(|v| v.to_string()).unwrap_or_default()
    }));
    files.push(("carbon.csv", carbon));

    files
}

/// Write the aggregate report (metric CSVs + JSON summary) under `dir`.
pub fn write_report(dir: &Path, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, text) in summary_csvs(summary) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, TraceSource};
    use crate::engine::{build_trace, run_simulation};

    fn run_cell(cfg: &ExperimentConfig, policy: Policy, seed: u64) -> (CellMeta, RunResult) {
        let trace = build_trace(cfg, 2.0, seed).unwrap();
        let res = run_simulation(cfg, policy, &trace, seed).unwrap();
        let meta = CellMeta {
            policy,
            rate: 2.0,
            seed,
            config_hash: cfg.hash(),
            end_time: res.end_time,
            tasks_total: res.tasks_total,
            tasks_completed: res.tasks_completed,
        };
        (meta, res)
    }

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.cluster.machines = 2;
        cfg.cluster.cores_per_vm = 8;
        cfg.aging_time_scale = 1e6;
        cfg.trace = TraceSource::Synthetic { duration_s: 3.0, tokens: Default::default() };
        cfg
    }

    #[test]
    fn cell_round_trip() {
        let cfg = small_cfg();
        let (meta, res) = run_cell(&cfg, Policy::Proposed, 1);
        let tmp = std::env::temp_dir().join(format!("agesim_report_rt_{}", std::process::id()));
        let dir = cell_dir(&tmp, Policy::Proposed, 2.0, 1);
        write_cell(&dir, &meta, &res).unwrap();
        let cells = read_cells(&tmp).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].meta.seed, 1);
        assert_eq!(cells[0].cores.len(), 2);
        assert_eq!(cells[0].cores[0].len(), 8);
        assert_eq!(cells[0].samples.len(), res.samples.len());
        for ((f0, f), c) in cells[0].cores[0].iter().zip(&res.machines[0]) {
            assert_eq!(*f0, c.f0);
            assert_eq!(*f, c.frequency);
        }
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn summary_covers_all_policies_and_carbon_vs_linux() {
        let cfg = small_cfg();
        let mut cells = Vec::new();
        for policy in [Policy::Proposed, Policy::Linux, Policy::LeastAged] {
            let (meta, res) = run_cell(&cfg, policy, 7);
            cells.push(Cell {
                meta,
                cores: res
                    .machines
                    .iter()
                    .map(|m| m.iter().map(|c| (c.f0, c.frequency)).collect())
                    .collect(),
                samples: res.samples.clone(),
            });
        }
        let summary = summarize(&cells, &CarbonParams::default()).unwrap();
        assert_eq!(summary.policies.len(), 3);
        let linux = summary.policies.iter().find(|p| p.policy == Policy::Linux).unwrap();
        assert_eq!(linux.carbon_reduction_vs_linux, Some(0.0));
        for p in &summary.policies {
            assert!(p.carbon_yearly_kg.is_some());
        }
        let csvs = summary_csvs(&summary);
        assert_eq!(csvs.len(), 4);
        assert!(csvs[0].1.starts_with("percentile,"));
    }

    #[test]
    fn linux_only_runs_self_compare() {
        let cfg = small_cfg();
        let (meta, res) = run_cell(&cfg, Policy::Linux, 3);
        let cells = vec![Cell {
            meta,
            cores: res
                .machines
                .iter()
                .map(|m| m.iter().map(|c| (c.f0, c.frequency)).collect())
                .collect(),
            samples: res.samples,
        }];
        let summary = summarize(&cells, &CarbonParams::default()).unwrap();
        let linux = &summary.policies[0];
        assert_eq!(linux.carbon_reduction_vs_linux, Some(0.0));
        let expected = 22.0 * 278.3 / 3.0;
        assert!((linux.carbon_yearly_kg.unwrap() - expected).abs() < 1e-9);
    }
}
