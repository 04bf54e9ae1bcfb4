//! Evaluation metrics: frequency CV, mean degradation, oversubscription
//! integral, normalized idle cores, and the yearly embodied-carbon estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// One timestamped observation of a machine's core/task counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: f64,
    pub machine: usize,
    pub n_total: usize,
    pub n_idle: usize,
    /// Running tasks, uncapped: includes oversubscribed ones.
    pub n_running: usize,
}

impl MetricSample {
    /// Normalized idle cores: `((N - N_idle) - T) / N`, clamped to [-1, 1].
    /// Negative values indicate oversubscription.
    pub fn normalized_idle(&self) -> f64 {
        let n = self.n_total as f64;
        let v = ((n - self.n_idle as f64) - self.n_running as f64) / n;
        v.clamp(-1.0, 1.0)
    }
}

/// Embodied-carbon accounting constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarbonParams {
    /// Baseline hardware refresh cycle, years.
    pub base_lifetime_years: f64,
    /// Per-server CPU embodied carbon over the base lifetime, kgCO2eq.
    pub cpu_embodied_kg: f64,
    pub machines: usize,
}

impl Default for CarbonParams {
    fn default() -> Self {
        CarbonParams { base_lifetime_years: 3.0, cpu_embodied_kg: 278.3, machines: 22 }
    }
}

/// Coefficient of variation: population std over mean.
pub fn frequency_cv(freqs: &[f64]) -> Result<f64> {
    if freqs.len() < 2 {
        return Err(SimError::InvalidArgument("need at least 2 cores for a CV".into()));
    }
    let n = freqs.len() as f64;
    let mean = freqs.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "mean frequency {mean} <= 0 (failed CPU)"
        )));
    }
    let var = freqs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Mean over cores of `f0 - f_final`.
pub fn mean_degradation(f0s: &[f64], freqs: &[f64]) -> Result<f64> {
    if f0s.len() != freqs.len() {
        return Err(SimError::InvalidArgument(format!(
            "length mismatch: {} f0s vs {} freqs",
            f0s.len(),
            freqs.len()
        )));
    }
    if f0s.is_empty() {
        return Err(SimError::InvalidArgument("empty frequency lists".into()));
    }
    let sum: f64 = f0s.iter().zip(freqs).map(|(a, b)| a - b).sum();
    Ok(sum / f0s.len() as f64)
}

/// Time integral of the oversubscribed task count for one machine, task*s.
///
/// Samples are piecewise-constant between observations, so the integral is
/// exact when samples are recorded at every event boundary.
pub fn oversubscription_integral(samples: &[MetricSample], machine: usize) -> Result<f64> {
    let series: Vec<&MetricSample> = samples.iter().filter(|s| s.machine == machine).collect();
    if series.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(SimError::InvalidArgument("samples not time-ordered".into()));
    }
    let mut total = 0.0;
    for w in series.windows(2) {
        let active = w[0].n_total - w[0].n_idle;
        let excess = w[0].n_running as f64 - active as f64;
        if excess > 0.0 {
            total += excess * (w[1].t - w[0].t);
        }
    }
    Ok(total)
}

/// Pooled normalized-idle values plus the reported percentiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizedIdleStats {
    pub values: Vec<f64>,
    pub p1: f64,
    pub p50: f64,
    pub p90: f64,
    pub min: f64,
}

/// Pool normalized-idle values over every sample of every machine.
pub fn normalized_idle_series(samples: &[MetricSample]) -> Result<NormalizedIdleStats> {
    if samples.is_empty() {
        return Err(SimError::InvalidArgument("empty sample series".into()));
    }
    let values: Vec<f64> = samples.iter().map(|s| s.normalized_idle()).collect();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(NormalizedIdleStats {
        p1: percentile_sorted(&sorted, 1.0),
        p50: percentile_sorted(&sorted, 50.0),
        p90: percentile_sorted(&sorted, 90.0),
        min: sorted[0],
        values,
    })
}

/// Nearest-rank percentile of a pre-sorted slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Nearest-rank percentile of an unsorted slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_sorted(&sorted, p)
}

/// Yearly embodied-carbon estimate from mean-degradation ratios.
///
/// The lifetime extends linearly with the inverse degradation ratio:
/// `lifetime_new = base * deg_linux / deg_technique`. Returns
/// (yearly kgCO2eq per cluster, reduction fraction vs linux).
pub fn estimate_yearly_embodied(
    deg_technique: f64,
    deg_linux: f64,
    params: &CarbonParams,
) -> Result<(f64, f64)> {
    if deg_technique <= 0.0 {
        return Err(SimError::InvalidArgument(
            "technique shows no measurable aging; lifetime extension undefined".into(),
        ));
    }
    if deg_linux <= 0.0 {
        return Err(SimError::InvalidArgument("linux degradation must be > 0".into()));
    }
    let lifetime_new = params.base_lifetime_years * (deg_linux / deg_technique);
    let yearly = params.machines as f64 * params.cpu_embodied_kg / lifetime_new;
    let reduction = 1.0 - deg_technique / deg_linux;
    Ok((yearly, reduction))
}
