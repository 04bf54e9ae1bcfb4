//! Experiment configuration: a single versioned JSON document that fully
//! determines a run matrix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aging::AgingParams;
use crate::error::{Result, SimError};
use crate::policy::ReactionParams;
use crate::workload::{TaskDurationModel, TokenDists};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Proposed,
    Linux,
    LeastAged,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Proposed => "proposed",
            Policy::Linux => "linux",
            Policy::LeastAged => "least_aged",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub machines: usize,
    pub cores_per_vm: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { machines: 22, cores_per_vm: 40 }
    }
}

/// Calibration anchor: worst-case drop over the rated lifetime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub target_drop: f64,
    pub lifetime_years: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { target_drop: 0.3, lifetime_years: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationConfig {
    pub n_chip: usize,
    pub alpha: f64,
    pub mean_p: f64,
    pub sigma_p: f64,
    pub k_prime: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig { n_chip: 10, alpha: 2.0, mean_p: 1.0, sigma_p: 0.05, k_prime: 1.0 }
    }
}

impl VariationConfig {
    /// Global nominal frequency: the zero-variation value of f0.
    pub fn nominal_frequency(&self) -> f64 {
        self.k_prime / self.mean_p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// Replay a trace CSV; each matrix rate compresses arrival times by 1/rate.
    File { path: PathBuf },
    /// Poisson arrivals at the matrix cell's rate for `duration_s` seconds.
    Synthetic {
        duration_s: f64,
        #[serde(default)]
        tokens: TokenDists,
    },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::Synthetic { duration_s: 60.0, tokens: TokenDists::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub cluster: ClusterConfig,
    pub aging: AgingParams,
    /// `None` until `calibrate` (or an in-process auto-calibration) fills it.
    pub k_fit: Option<f64>,
    pub calibration: CalibrationConfig,
    pub variation: VariationConfig,
    pub policies: Vec<Policy>,
    pub reaction: ReactionParams,
    pub linux_weights_csv: Option<PathBuf>,
    pub durations: TaskDurationModel,
    pub trace: TraceSource,
    /// Request rates (requests/s for synthetic traces, replay speed-up for
    /// file traces). One matrix dimension.
    pub rates: Vec<f64>,
    /// Master seeds; the other matrix dimension.
    pub seeds: Vec<u64>,
    /// Multiplies every aging interval so short traces can exercise
    /// year-scale degradation.
    pub aging_time_scale: f64,
    /// Keep running idling passes until at least this simulation time even
    /// after the last task completes.
    pub sim_duration_s: Option<f64>,
    pub output_dir: PathBuf,
    /// Keep the full per-event log in memory (and in artifacts). Large runs
    /// may want this off; metrics only need the sample series.
    pub record_event_log: bool,
    /// Dump each selective-idling decision as a CSV row.
    pub debug_idling_csv: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            cluster: ClusterConfig::default(),
            aging: AgingParams::default(),
            k_fit: None,
            calibration: CalibrationConfig::default(),
            variation: VariationConfig::default(),
            policies: vec![Policy::Proposed, Policy::Linux, Policy::LeastAged],
            reaction: ReactionParams::default(),
            linux_weights_csv: None,
            durations: TaskDurationModel::default(),
            trace: TraceSource::default(),
            rates: vec![1.0],
            seeds: vec![0],
            aging_time_scale: 1.0,
            sim_duration_s: None,
            output_dir: PathBuf::from("out"),
            record_event_log: true,
            debug_idling_csv: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SimError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.cluster.machines < 1 {
            return Err(SimError::Config("machines must be >= 1".into()));
        }
        if self.cluster.cores_per_vm < 1 {
            return Err(SimError::Config("cores_per_vm must be >= 1".into()));
        }
        if self.rates.is_empty() || self.seeds.is_empty() {
            return Err(SimError::Config("need at least one rate and one seed".into()));
        }
        if self.policies.is_empty() {
            return Err(SimError::Config("need at least one policy".into()));
        }
        if self.rates.iter().any(|r| *r <= 0.0) {
            return Err(SimError::Config("rates must be > 0".into()));
        }
        if self.aging_time_scale <= 0.0 {
            return Err(SimError::Config("aging_time_scale must be > 0".into()));
        }
        if !(self.calibration.target_drop > 0.0 && self.calibration.target_drop < 1.0) {
            return Err(SimError::Config("calibration target_drop must lie in (0,1)".into()));
        }
        if self.calibration.lifetime_years <= 0.0 {
            return Err(SimError::Config("calibration lifetime_years must be > 0".into()));
        }
        if self.variation.n_chip < 1 {
            return Err(SimError::Config("n_chip must be >= 1".into()));
        }
        if self.variation.sigma_p < 0.0 || self.variation.alpha < 0.0 {
            return Err(SimError::Config("sigma_p and alpha must be >= 0".into()));
        }
        if self.variation.k_prime <= 0.0 || self.variation.mean_p <= 0.0 {
            return Err(SimError::Config("k_prime and mean_p must be > 0".into()));
        }
        self.aging.validate()?;
        self.reaction.validate()?;
        self.durations.validate()?;
        Ok(())
    }

    /// Aging parameters with K filled in: the configured `k_fit` if present,
    /// otherwise calibrated from the anchors.
    pub fn effective_aging_params(&self) -> Result<AgingParams> {
        let mut params = self.aging.clone();
        params.k_fit = match self.k_fit {
            Some(k) => k,
            None => crate::aging::calibrate_k(
                self.calibration.target_drop,
                self.calibration.lifetime_years * crate::aging::YEAR_SECONDS,
                &self.aging,
            )?,
        };
        params.validate()?;
        Ok(params)
    }

    /// SHA-256 of the canonical JSON form, for output provenance.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        format!("{digest:x}")
    }
}
