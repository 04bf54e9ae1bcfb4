//! Aging-aware core management: idle-score task-to-core mapping and
//! reaction-function selective core idling.
//!
//! Task mapping picks the unassigned active core with the largest idle score
//! (sum of its recent idle durations plus any in-progress idle interval);
//! a mostly-idle core is the least-aged candidate. Selective idling runs
//! periodically: it turns the normalized core/task imbalance through a
//! piecewise tan/arctan reaction function and deep-idles the most-aged
//! task-free cores (or wakes the least-aged sleepers) accordingly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Idle-history window length, matching the Linux governor's recent-idle ring.
pub const IDLE_HISTORY_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdleState {
    Active,
    DeepIdle,
}

/// Per-core bookkeeping for the management algorithms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManagedCore {
    pub core_id: usize,
    pub assigned_task: Option<u64>,
    /// Up to 8 most recent closed idle durations, oldest first.
    pub idle_history: VecDeque<f64>,
    /// Start of the in-progress idle interval, if the core is idle right now.
    pub idle_open_since: Option<f64>,
    pub idle_state: IdleState,
    /// dVth estimate refreshed at each periodic idling pass, V.
    pub age_estimate: f64,
}

impl ManagedCore {
    pub fn new(core_id: usize, now: f64) -> Self {
        ManagedCore {
            core_id,
            assigned_task: None,
            idle_history: VecDeque::with_capacity(IDLE_HISTORY_LEN),
            idle_open_since: Some(now),
            idle_state: IdleState::Active,
            age_estimate: 0.0,
        }
    }

    /// Idle score at `now`: closed history plus the open interval, if any.
    pub fn idle_score(&self, now: f64) -> f64 {
        let open = self.idle_open_since.map(|t0| (now - t0).max(0.0)).unwrap_or(0.0);
        self.idle_history.iter().sum::<f64>() + open
    }
}

/// Idle-history transitions driven by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleEvent {
    TaskAssigned,
    BecameIdle,
}

/// Coefficients of the piecewise reaction function and the idling cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReactionParams {
    /// Underutilization branch coefficient (tan argument scale).
    pub pos_gain: f64,
    /// Oversubscription branch coefficient (arctan argument scale).
    pub neg_gain: f64,
    /// Seconds between idling passes.
    pub idling_period: f64,
}

impl Default for ReactionParams {
    fn default() -> Self {
        ReactionParams { pos_gain: 0.785, neg_gain: 1.55, idling_period: 1.0 }
    }
}

impl ReactionParams {
    pub fn validate(&self) -> Result<()> {
        if self.pos_gain <= 0.0 || self.pos_gain >= std::f64::consts::FRAC_PI_2 {
            return Err(SimError::InvalidParams(format!(
                "pos_gain must lie in (0, pi/2) so tan stays finite on [0,1], got {}",
                self.pos_gain
            )));
        }
        if self.neg_gain <= self.pos_gain {
            return Err(SimError::InvalidParams(format!(
                "neg_gain ({}) must exceed pos_gain ({}) for faster oversubscription response",
                self.neg_gain, self.pos_gain
            )));
        }
        if self.idling_period <= 0.0 {
            return Err(SimError::InvalidParams("idling_period must be > 0".into()));
        }
        Ok(())
    }

    /// Piecewise reaction: tan on underutilization, arctan on oversubscription.
    pub fn reaction(&self, e_norm: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&e_norm) {
            return Err(SimError::InvalidArgument(format!(
                "reaction input must lie in [-1,1], got {e_norm}"
            )));
        }
        Ok(if e_norm >= 0.0 {
            (self.pos_gain * e_norm).tan()
        } else {
            (self.neg_gain * e_norm).atan()
        })
    }
}

/// Task-to-core mapping over the working set of active cores.
///
/// Returns the unassigned core with the strictly greatest idle score; the
/// earliest-iterated core wins ties. `None` means every core is busy and the
/// caller should oversubscribe.
pub fn select_core(working_set: &[ManagedCore], now: f64) -> Option<usize> {
    let mut selected: Option<usize> = None;
    let mut selected_score = 0.0;
    for core in working_set {
        if core.idle_state != IdleState::Active || core.assigned_task.is_some() {
            continue;
        }
        let score = core.idle_score(now);
        if selected.is_none() || score > selected_score {
            selected = Some(core.core_id);
            selected_score = score;
        }
    }
    selected
}

/// Maintain the idle-duration ring. Events must alternate per core.
pub fn record_idle_transition(core: &mut ManagedCore, event: IdleEvent, now: f64) -> Result<()> {
    match event {
        IdleEvent::BecameIdle => {
            if core.idle_open_since.is_some() {
                return Err(SimError::IdleStateMachine(format!(
                    "core {} became idle twice without an assignment",
                    core.core_id
                )));
            }
            core.idle_open_since = Some(now);
        }
        IdleEvent::TaskAssigned => {
            let opened = core.idle_open_since.take().ok_or_else(|| {
                SimError::IdleStateMachine(format!(
                    "core {} assigned a task with no open idle interval",
                    core.core_id
                ))
            })?;
            if core.idle_history.len() == IDLE_HISTORY_LEN {
                core.idle_history.pop_front();
            }
            core.idle_history.push_back((now - opened).max(0.0));
        }
    }
    Ok(())
}

/// One requested idle-state change.
pub type IdleTransition = (usize, IdleState);

/// Inputs and outputs of one selective-idling pass, kept for debug dumps.
#[derive(Debug, Clone)]
pub struct IdlingDecision {
    pub n: usize,
    pub sleeping: usize,
    pub total_tasks: usize,
    pub e_norm: f64,
    pub reaction: f64,
    pub e_corr: i64,
    pub transitions: Vec<IdleTransition>,
}

/// Selective core idling pass.
///
/// Computes the normalized imbalance between active cores and running tasks,
/// maps it through the reaction function, and returns the idle-state
/// transitions to apply: most-aged task-free cores go to deep idle on
/// underutilization, least-aged sleepers wake on oversubscription.
pub fn adjust_sleeping_cores(
    cores: &[ManagedCore],
    oversub_tasks: usize,
    params: &ReactionParams,
) -> Result<Vec<IdleTransition>> {
    Ok(plan_idling(cores, oversub_tasks, params)?.transitions)
}

/// The full idling computation behind [`adjust_sleeping_cores`].
pub fn plan_idling(
    cores: &[ManagedCore],
    oversub_tasks: usize,
    params: &ReactionParams,
) -> Result<IdlingDecision> {
    let n = cores.len();
    if n == 0 {
        return Ok(IdlingDecision {
            n: 0,
            sleeping: 0,
            total_tasks: 0,
            e_norm: 0.0,
            reaction: 0.0,
            e_corr: 0,
            transitions: Vec::new(),
        });
    }
    let active = cores.iter().filter(|c| c.idle_state == IdleState::Active).count();
    let normal_tasks = cores.iter().filter(|c| c.assigned_task.is_some()).count();
    let sleeping = n - active;
    let total_tasks = (normal_tasks + oversub_tasks).min(n);
    let e_norm = (n as f64 - sleeping as f64 - total_tasks as f64) / n as f64;
    let f = params.reaction(e_norm)?;
    // int() truncation toward zero; |F| below 1/N yields no action, which is
    // the algorithm's natural hysteresis.
    let e_corr = (n as f64 * f).trunc() as i64;
    let delta = e_corr.unsigned_abs() as usize;
    let mut out = Vec::new();
    if e_corr > 0 {
        let mut candidates: Vec<&ManagedCore> = cores
            .iter()
            .filter(|c| c.idle_state == IdleState::Active && c.assigned_task.is_none())
            .collect();
        // Most aged first; core id breaks exact ties deterministically.
        candidates.sort_by(|a, b| {
            b.age_estimate
                .partial_cmp(&a.age_estimate)
                .unwrap()
                .then(a.core_id.cmp(&b.core_id))
        });
        out.extend(candidates.iter().take(delta).map(|c| (c.core_id, IdleState::DeepIdle)));
    } else if e_corr < 0 {
        let mut candidates: Vec<&ManagedCore> =
            cores.iter().filter(|c| c.idle_state == IdleState::DeepIdle).collect();
        // Least aged first.
        candidates.sort_by(|a, b| {
            a.age_estimate
                .partial_cmp(&b.age_estimate)
                .unwrap()
                .then(a.core_id.cmp(&b.core_id))
        });
        out.extend(candidates.iter().take(delta).map(|c| (c.core_id, IdleState::Active)));
    }
    Ok(IdlingDecision {
        n,
        sleeping,
        total_tasks,
        e_norm,
        reaction: f,
        e_corr,
        transitions: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(id: usize, history: &[f64]) -> ManagedCore {
        let mut c = ManagedCore::new(id, 0.0);
        c.idle_open_since = None;
        c.idle_history = history.iter().copied().collect();
        c
    }

    #[test]
    fn select_core_picks_greatest_idle_score() {
        let ws = vec![core(0, &[5.0]), core(1, &[12.0]), core(2, &[9.0])];
        assert_eq!(select_core(&ws, 100.0), Some(1));
    }

    #[test]
    fn select_core_none_when_all_assigned() {
        let mut a = core(0, &[5.0]);
        a.assigned_task = Some(1);
        let ws = vec![a];
        assert_eq!(select_core(&ws, 0.0), None);
    }

    #[test]
    fn select_core_tie_goes_to_first_iterated() {
        // Strict-inequality update: ids 2 and 5 both score 7, core 2 wins.
        let ws = vec![core(2, &[7.0]), core(5, &[7.0])];
        assert_eq!(select_core(&ws, 0.0), Some(2));
    }

    #[test]
    fn select_core_counts_open_idle_interval() {
        let a = core(0, &[5.0]);
        let mut b = core(1, &[1.0]);
        b.idle_open_since = Some(0.0);
        let ws = vec![a, b];
        // At t=10 core 1 scores 1 + 10 = 11 > 5.
        assert_eq!(select_core(&ws, 10.0), Some(1));
    }

    #[test]
    fn select_core_skips_deep_idle() {
        let mut a = core(0, &[100.0]);
        a.idle_state = IdleState::DeepIdle;
        let ws = vec![a, core(1, &[1.0])];
        assert_eq!(select_core(&ws, 0.0), Some(1));
    }

    #[test]
    fn idle_transition_interval_arithmetic() {
        let mut c = ManagedCore::new(0, 0.0);
        c.idle_open_since = None;
        record_idle_transition(&mut c, IdleEvent::BecameIdle, 10.0).unwrap();
        record_idle_transition(&mut c, IdleEvent::TaskAssigned, 14.0).unwrap();
        assert_eq!(c.idle_history.back().copied(), Some(4.0));
        assert!(c.idle_open_since.is_none());
    }

    #[test]
    fn idle_history_keeps_latest_eight() {
        let mut c = ManagedCore::new(0, 0.0);
        c.idle_open_since = None;
        for k in 0..9 {
            let t = k as f64 * 10.0;
            record_idle_transition(&mut c, IdleEvent::BecameIdle, t).unwrap();
            record_idle_transition(&mut c, IdleEvent::TaskAssigned, t + (k + 1) as f64).unwrap();
        }
        assert_eq!(c.idle_history.len(), 8);
        assert_eq!(c.idle_history.front().copied(), Some(2.0));
        assert_eq!(c.idle_history.back().copied(), Some(9.0));
    }

    #[test]
    fn idle_transition_rejects_double_idle() {
        let mut c = ManagedCore::new(0, 0.0);
        assert!(record_idle_transition(&mut c, IdleEvent::BecameIdle, 1.0).is_err());
        let mut c = ManagedCore::new(0, 0.0);
        c.idle_open_since = None;
        assert!(record_idle_transition(&mut c, IdleEvent::TaskAssigned, 1.0).is_err());
    }

    #[test]
    fn reaction_fixed_points() {
        let p = ReactionParams::default();
        assert_eq!(p.reaction(0.0).unwrap(), 0.0);
        assert!((p.reaction(1.0).unwrap() - 0.99920).abs() < 1e-4);
        assert!((p.reaction(-1.0).unwrap() - (-0.99783)).abs() < 1e-4);
        assert!(p.reaction(1.5).is_err());
        assert!(p.reaction(-1.5).is_err());
    }

    #[test]
    fn reaction_monotone_and_negative_branch_faster() {
        let p = ReactionParams::default();
        let mut prev = f64::NEG_INFINITY;
        let steps = 2000;
        for k in 0..=steps {
            let x = -1.0 + 2.0 * k as f64 / steps as f64;
            let f = p.reaction(x).unwrap();
            assert!(f > prev, "not monotone at {x}");
            prev = f;
        }
        // The arctan branch dominates in magnitude until the tan branch's
        // pole takes over within ~0.2% of full scale: the endpoint values
        // themselves (tan(0.785)=0.99920 vs arctan(1.55)=0.99783) flip.
        for k in 1..=998 {
            let x = k as f64 / 1000.0;
            assert!(
                p.reaction(-x).unwrap().abs() > p.reaction(x).unwrap().abs(),
                "oversubscription branch not faster at {x}"
            );
        }
        assert!(p.reaction(1.0).unwrap() > p.reaction(-1.0).unwrap().abs());
    }

    fn fleet(n: usize) -> Vec<ManagedCore> {
        (0..n)
            .map(|id| {
                let mut c = ManagedCore::new(id, 0.0);
                c.age_estimate = id as f64 * 1e-4;
                c
            })
            .collect()
    }

    #[test]
    fn idling_underutilized_fleet() {
        // N=40, all active, 20 assigned, 0 oversub:
        // e = 0.5, F = tan(0.3925) ~ 0.41398, e_corr = int(16.56) = 16.
        let mut cores = fleet(40);
        for c in cores.iter_mut().take(20) {
            c.assigned_task = Some(c.core_id as u64);
        }
        let out = adjust_sleeping_cores(&cores, 0, &ReactionParams::default()).unwrap();
        assert_eq!(out.len(), 16);
        assert!(out.iter().all(|(_, s)| *s == IdleState::DeepIdle));
        // Most aged task-free cores first: ids 39 down to 24.
        let ids: Vec<usize> = out.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, (24..40).rev().collect::<Vec<_>>());
    }

    #[test]
    fn idling_oversubscribed_fleet_wakes_least_aged() {
        // N=40, 30 deep idle, 10 assigned, 5 oversub:
        // T = 15, e = -0.125, F = arctan(-0.19375) ~ -0.19138, e_corr = -7.
        let mut cores = fleet(40);
        for c in cores.iter_mut() {
            if c.core_id < 10 {
                c.assigned_task = Some(c.core_id as u64);
            } else {
                c.idle_state = IdleState::DeepIdle;
            }
        }
        let out = adjust_sleeping_cores(&cores, 5, &ReactionParams::default()).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|(_, s)| *s == IdleState::Active));
        let ids: Vec<usize> = out.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec![10, 11, 12, 13, 14, 15, 16]);
    }

    #[test]
    fn idling_balanced_fleet_is_fixed_point() {
        // active == T and the rest asleep: e = 0, no transitions.
        let mut cores = fleet(40);
        for c in cores.iter_mut() {
            if c.core_id < 12 {
                c.assigned_task = Some(c.core_id as u64);
            } else {
                c.idle_state = IdleState::DeepIdle;
            }
        }
        let out = adjust_sleeping_cores(&cores, 0, &ReactionParams::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn idling_never_parks_a_loaded_core() {
        let mut cores = fleet(8);
        for c in cores.iter_mut() {
            c.assigned_task = Some(c.core_id as u64);
        }
        cores[7].assigned_task = None;
        let out = adjust_sleeping_cores(&cores, 0, &ReactionParams::default()).unwrap();
        for (id, s) in &out {
            assert_eq!(*s, IdleState::DeepIdle);
            assert!(cores[*id].assigned_task.is_none());
        }
    }

    #[test]
    fn idling_caps_at_eligible_cores() {
        // Empty fleet of tasks, all active: e=1, F~0.9992, e_corr=int(0.9992*N).
        let cores = fleet(4);
        let out = adjust_sleeping_cores(&cores, 0, &ReactionParams::default()).unwrap();
        assert_eq!(out.len(), 3); // int(4 * 0.9992) = 3
    }
}
