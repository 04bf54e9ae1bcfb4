//! NBTI reaction-diffusion aging model.
//!
//! A core's maximum frequency degrades as its threshold-voltage shift
//! accumulates:
//!
//! ```text
//! f(t) = f0 * (1 - dVth / (Vdd - Vth0))
//! ```
//!
//! The shift itself is advanced per time interval with a recursion driven by
//! a time-independent aging factor (ADF) that depends on the core's idle/task
//! state through its steady-state temperature:
//!
//! ```text
//! ADF(T, Vdd, Y) = K * exp(-E0 / (kB T)) * exp(B Vdd / (tox kB T)) * Y^n
//! dVth(t_p)      = ADF_p * ((dVth(t_{p-1}) / ADF_p)^(1/n) + tau_p)^n
//! ```
//!
//! Deep idle power-gates the core: ADF is exactly zero and the shift is
//! carried through unchanged. The fitting constant `K` is solved from a
//! worst-case anchor (e.g. a 30% frequency drop after 10 years of continuous
//! allocated stress) by [`calibrate_k`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;

/// Seconds per Julian year.
pub const YEAR_SECONDS: f64 = 365.25 * 86400.0;

/// Idle/task state of a physical core, as seen by the temperature model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreState {
    /// Active and executing an inference task (C0, hottest).
    ActiveAllocated,
    /// Active but without an inference task; still runs system tasks.
    ActiveUnallocated,
    /// Power-gated (C6). No switching, aging halted.
    DeepIdle,
}

/// Physical constants and fitted parameters of the aging model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgingParams {
    /// Fitting constant K, solved by calibration.
    pub k_fit: f64,
    /// Activation energy E0 in eV.
    pub e0: f64,
    /// Boltzmann constant in eV/K.
    pub boltzmann: f64,
    /// Field-acceleration constant B (units absorbed so B*Vdd/tox is in eV).
    pub b_field: f64,
    /// Oxide thickness in nm.
    pub t_ox: f64,
    /// Supply voltage in V.
    pub v_dd: f64,
    /// Nominal threshold voltage in V.
    pub v_th0: f64,
    /// Time exponent n of the reaction-diffusion recursion.
    pub n_exp: f64,
    /// Per-task stress factor Y in [0, 1].
    pub stress_y: f64,
    /// Temperature while active with a task, K.
    pub temp_active_allocated: f64,
    /// Temperature while active without a task, K.
    pub temp_active_unallocated: f64,
    /// Temperature while deep idle, K.
    pub temp_deep_idle: f64,
}

impl Default for AgingParams {
    fn default() -> Self {
        AgingParams {
            k_fit: 1.0,
            e0: 0.08,
            boltzmann: BOLTZMANN_EV,
            // B*Vdd/t_ox = 0.075 eV < E0, so hotter states age faster and
            // both exponentials stay O(1) near 327 K.
            b_field: 0.1,
            t_ox: 1.2,
            v_dd: 0.9,
            v_th0: 0.35,
            n_exp: 1.0 / 6.0,
            stress_y: 1.0,
            temp_active_allocated: 327.15,
            temp_active_unallocated: 324.23,
            temp_deep_idle: 321.15,
        }
    }
}

impl AgingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_dd > self.v_th0 && self.v_th0 > 0.0) {
            return Err(SimError::InvalidParams(format!(
                "require v_dd > v_th0 > 0, got v_dd={} v_th0={}",
                self.v_dd, self.v_th0
            )));
        }
        if !(self.n_exp > 0.0 && self.n_exp < 1.0) {
            return Err(SimError::InvalidParams(format!(
                "n_exp must lie in (0,1), got {}",
                self.n_exp
            )));
        }
        if !(0.0..=1.0).contains(&self.stress_y) {
            return Err(SimError::InvalidParams(format!(
                "stress_y must lie in [0,1], got {}",
                self.stress_y
            )));
        }
        let temps = [
            self.temp_deep_idle,
            self.temp_active_unallocated,
            self.temp_active_allocated,
        ];
        if temps.iter().any(|t| *t <= 0.0) {
            return Err(SimError::InvalidParams("temperatures must be > 0 K".into()));
        }
        // Table-1 ordering: DeepIdle < ActiveUnallocated < ActiveAllocated.
        if !(temps[0] < temps[1] && temps[1] < temps[2]) {
            return Err(SimError::InvalidParams(
                "temperatures must satisfy deep_idle < active_unallocated < active_allocated"
                    .into(),
            ));
        }
        if self.k_fit < 0.0 || !self.k_fit.is_finite() {
            return Err(SimError::InvalidParams(format!("k_fit must be finite and >= 0, got {}", self.k_fit)));
        }
        Ok(())
    }

    /// Steady-state temperature for a core state, K.
    pub fn temperature(&self, state: CoreState) -> f64 {
        match state {
            CoreState::ActiveAllocated => self.temp_active_allocated,
            CoreState::ActiveUnallocated => self.temp_active_unallocated,
            CoreState::DeepIdle => self.temp_deep_idle,
        }
    }

    /// Headroom between supply and nominal threshold voltage, V.
    pub fn voltage_headroom(&self) -> f64 {
        self.v_dd - self.v_th0
    }
}

/// Aging state of one physical core.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreAging {
    /// Initial maximum frequency (process-variation sample).
    pub f0: f64,
    /// Accumulated threshold-voltage shift, V. Non-decreasing.
    pub vth_shift: f64,
    /// Simulation time of the last lazy aging update, s.
    pub last_update: f64,
}

impl CoreAging {
    pub fn new(f0: f64) -> Self {
        CoreAging { f0, vth_shift: 0.0, last_update: 0.0 }
    }
}

/// Aging factor for one interval in the given core state.
///
/// Deep idle returns exactly zero: the core is power-gated and the recursion
/// carries the shift through untouched.
pub fn adf(state: CoreState, params: &AgingParams) -> f64 {
    if state == CoreState::DeepIdle {
        return 0.0;
    }
    let t = params.temperature(state);
    adf_at_temperature(t, params)
}

fn adf_at_temperature(t: f64, params: &AgingParams) -> f64 {
    let kbt = params.boltzmann * t;
    params.k_fit
        * (-params.e0 / kbt).exp()
        * (params.b_field * params.v_dd / (params.t_ox * kbt)).exp()
        * params.stress_y.powf(params.n_exp)
}

/// One step of the threshold-shift recursion over an interval of length `tau`.
pub fn advance_vth(vth_prev: f64, adf_p: f64, tau: f64, n_exp: f64) -> Result<f64> {
    if tau < 0.0 {
        return Err(SimError::InvalidArgument(format!("negative tau {tau}")));
    }
    if vth_prev < 0.0 {
        return Err(SimError::InvalidArgument(format!("negative vth_prev {vth_prev}")));
    }
    if adf_p == 0.0 || tau == 0.0 {
        // Deep idle (or a zero-length interval) leaves the shift bit-identical.
        return Ok(vth_prev);
    }
    if vth_prev == 0.0 {
        return Ok(adf_p * tau.powf(n_exp));
    }
    let equivalent_time = (vth_prev / adf_p).powf(1.0 / n_exp);
    Ok(adf_p * (equivalent_time + tau).powf(n_exp))
}

/// Current maximum frequency of a core under Eq.-1 degradation.
pub fn core_frequency(core: &CoreAging, params: &AgingParams) -> Result<f64> {
    let headroom = params.voltage_headroom();
    if core.vth_shift >= headroom {
        return Err(SimError::EndOfLife { core_id: usize::MAX });
    }
    Ok(core.f0 * (1.0 - core.vth_shift / headroom))
}

/// Solve the fitting constant K from a worst-case anchor.
///
/// Worst case is continuous `ActiveAllocated` stress with Y = 1 semantics
/// taken from `params` (its `k_fit` is ignored). A single stress interval of
/// `lifetime` seconds starting from a fresh core must produce a shift of
/// `target_drop * (v_dd - v_th0)`.
pub fn calibrate_k(target_drop: f64, lifetime: f64, params: &AgingParams) -> Result<f64> {
    if !(target_drop > 0.0 && target_drop < 1.0) {
        return Err(SimError::InvalidArgument(format!(
            "target_drop must lie in (0,1), got {target_drop}"
        )));
    }
    if lifetime <= 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "lifetime must be > 0, got {lifetime}"
        )));
    }
    let mut unit = params.clone();
    unit.k_fit = 1.0;
    unit.validate()?;
    let adf_unit = adf(CoreState::ActiveAllocated, &unit);
    let k = target_drop * params.voltage_headroom() / (adf_unit * lifetime.powf(params.n_exp));
    if !k.is_finite() || k <= 0.0 {
        return Err(SimError::InvalidParams(format!(
            "calibration produced non-finite or non-positive K ({k})"
        )));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calibrated() -> AgingParams {
        let mut p = AgingParams::default();
        p.k_fit = calibrate_k(0.3, 10.0 * YEAR_SECONDS, &p).unwrap();
        p
    }

    #[test]
    fn adf_deep_idle_is_exactly_zero() {
        let p = calibrated();
        assert_eq!(adf(CoreState::DeepIdle, &p), 0.0);
    }

    #[test]
    fn adf_zero_k_is_zero_for_all_states() {
        let mut p = AgingParams::default();
        p.k_fit = 0.0;
        for s in [CoreState::ActiveAllocated, CoreState::ActiveUnallocated] {
            assert_eq!(adf(s, &p), 0.0);
        }
    }

    #[test]
    fn adf_hotter_active_state_ages_faster_under_defaults() {
        // Oracle: with the defaults B*Vdd/t_ox = 0.075 eV < E0 = 0.08 eV, so
        // d(ADF)/dT = (E0 - B*Vdd/t_ox) / (kB T^2) * ADF > 0.
        let p = calibrated();
        assert!(p.b_field * p.v_dd / p.t_ox < p.e0);
        let alloc = adf(CoreState::ActiveAllocated, &p);
        let unalloc = adf(CoreState::ActiveUnallocated, &p);
        assert!(alloc > unalloc, "adf(54C)={alloc} must exceed adf(51.08C)={unalloc}");

        // Finite-difference sign check on the temperature derivative.
        let h = 1e-3;
        let up = super::adf_at_temperature(p.temp_active_allocated + h, &p);
        let down = super::adf_at_temperature(p.temp_active_allocated - h, &p);
        assert!(up > down);
    }

    #[test]
    fn advance_vth_idle_halting_is_bit_exact() {
        let v = 0.123456789;
        assert_eq!(advance_vth(v, 0.0, 42.0, 1.0 / 6.0).unwrap(), v);
    }

    #[test]
    fn advance_vth_base_case() {
        let a = 0.01;
        let tau = 1000.0;
        let n = 1.0 / 6.0;
        let got = advance_vth(0.0, a, tau, n).unwrap();
        assert!((got - a * tau.powf(n)).abs() < 1e-15);
    }

    #[test]
    fn advance_vth_rejects_negative_tau() {
        assert!(advance_vth(0.0, 1.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn advance_vth_chaining_matches_closed_form() {
        // Oracle: by induction on the recursion, k intervals of length tau at
        // constant ADF equal one interval of length k*tau.
        let a = 0.007;
        let n = 1.0 / 6.0;
        let tau = 3600.0;
        let k = 1000;
        let mut v = 0.0;
        for _ in 0..k {
            v = advance_vth(v, a, tau, n).unwrap();
        }
        let closed = a * (k as f64 * tau).powf(n);
        assert!((v - closed).abs() <= 1e-9 * closed, "chained {v} vs closed {closed}");
    }

    #[test]
    fn advance_vth_is_monotone() {
        let a = 0.02;
        let n = 1.0 / 6.0;
        let mut v = 0.0;
        for i in 0..100 {
            let next = advance_vth(v, a, 10.0 + i as f64, n).unwrap();
            assert!(next > v);
            v = next;
        }
    }

    #[test]
    fn core_frequency_fresh_core() {
        let p = calibrated();
        let c = CoreAging::new(2.5);
        assert_eq!(core_frequency(&c, &p).unwrap(), 2.5);
    }

    #[test]
    fn core_frequency_thirty_percent_drop() {
        let p = calibrated();
        let mut c = CoreAging::new(1.0);
        c.vth_shift = 0.3 * p.voltage_headroom();
        let f = core_frequency(&c, &p).unwrap();
        assert!((f - 0.7).abs() < 1e-12);
    }

    #[test]
    fn core_frequency_half_drop() {
        let p = calibrated();
        let mut c = CoreAging::new(2.0);
        c.vth_shift = 0.5 * p.voltage_headroom();
        let f = core_frequency(&c, &p).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn core_frequency_end_of_life() {
        let p = calibrated();
        let mut c = CoreAging::new(1.0);
        c.vth_shift = p.voltage_headroom();
        assert!(matches!(core_frequency(&c, &p), Err(SimError::EndOfLife { .. })));
    }

    #[test]
    fn calibration_round_trip() {
        let p = calibrated();
        let lifetime = 10.0 * YEAR_SECONDS;
        let a = adf(CoreState::ActiveAllocated, &p);
        let vth = advance_vth(0.0, a, lifetime, p.n_exp).unwrap();
        let mut c = CoreAging::new(1.0);
        c.vth_shift = vth;
        let f = core_frequency(&c, &p).unwrap();
        assert!((f - 0.7).abs() <= 1e-6 * 0.7, "round trip gave f={f}");
    }

    #[test]
    fn calibration_limit_and_scaling() {
        let p = AgingParams::default();
        let k_small = calibrate_k(1e-12, 10.0 * YEAR_SECONDS, &p).unwrap();
        assert!(k_small < 1e-11);

        // Oracle on the closed form: doubling lifetime divides K by 2^n.
        let k1 = calibrate_k(0.3, 10.0 * YEAR_SECONDS, &p).unwrap();
        let k2 = calibrate_k(0.3, 20.0 * YEAR_SECONDS, &p).unwrap();
        let ratio = k1 / k2;
        assert!((ratio - 2f64.powf(p.n_exp)).abs() < 1e-12);
    }

    #[test]
    fn calibrate_rejects_degenerate_anchor() {
        let p = AgingParams::default();
        assert!(calibrate_k(0.0, 1.0, &p).is_err());
        assert!(calibrate_k(1.0, 1.0, &p).is_err());
        assert!(calibrate_k(0.3, 0.0, &p).is_err());
    }

    #[test]
    fn params_validation_catches_bad_ordering() {
        let mut p = AgingParams::default();
        p.temp_deep_idle = 400.0;
        assert!(p.validate().is_err());

        let mut p = AgingParams::default();
        p.v_th0 = 1.0;
        assert!(p.validate().is_err());
    }
}
