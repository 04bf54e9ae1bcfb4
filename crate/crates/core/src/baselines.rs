//! Comparison policies: linux-style probabilistic placement and least-aged
//! (executed-work) placement. Neither baseline ever deep-idles a core.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Result, SimError};
use crate::policy::{IdleState, ManagedCore};

/// Per-core cumulative busy time in seconds; the executed-work aging estimate.
#[derive(Debug, Clone, Default)]
pub struct CoreWorkLedger {
    busy: Vec<f64>,
}

impl CoreWorkLedger {
    pub fn new(n_cores: usize) -> Self {
        CoreWorkLedger { busy: vec![0.0; n_cores] }
    }

    pub fn add(&mut self, core_id: usize, duration: f64) {
        self.busy[core_id] += duration;
    }

    pub fn busy_time(&self, core_id: usize) -> f64 {
        self.busy[core_id]
    }
}

/// Linux-style placement: sample an unassigned core, uniformly or from the
/// optional per-core probability table (renormalized over the candidates).
pub fn linux_select_core<R: Rng>(
    cores: &[ManagedCore],
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Option<usize> {
    let candidates: Vec<usize> = cores
        .iter()
        .filter(|c| c.idle_state == IdleState::Active && c.assigned_task.is_none())
        .map(|c| c.core_id)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    match weights {
        None => Some(candidates[rng.gen_range(0..candidates.len())]),
        Some(w) => {
            let cand_weights: Vec<f64> = candidates.iter().map(|&id| w[id]).collect();
            match WeightedIndex::new(&cand_weights) {
                Ok(dist) => Some(candidates[dist.sample(rng)]),
                // All candidate weights zero: fall back to uniform.
                Err(_) => Some(candidates[rng.gen_range(0..candidates.len())]),
            }
        }
    }
}

/// Least-aged placement: the unassigned core with minimal cumulative busy
/// time, ties broken by lowest core id.
pub fn least_aged_select_core(cores: &[ManagedCore], ledger: &CoreWorkLedger) -> Option<usize> {
    cores
        .iter()
        .filter(|c| c.idle_state == IdleState::Active && c.assigned_task.is_none())
        .map(|c| c.core_id)
        .min_by(|&a, &b| {
            ledger
                .busy_time(a)
                .partial_cmp(&ledger.busy_time(b))
                .unwrap()
                .then(a.cmp(&b))
        })
}

/// Parse a `core_id,probability` weights CSV into a dense per-core table.
pub fn parse_weights_csv(text: &str, n_cores: usize) -> Result<Vec<f64>> {
    let mut weights = vec![0.0; n_cores];
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "core_id,probability" => {}
        _ => {
            return Err(SimError::Parse {
                line: 1,
                message: "expected header 'core_id,probability'".into(),
            })
        }
    }
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(SimError::Parse { line: idx + 1, message: "expected 2 fields".into() });
        }
        let id: usize = parts[0].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad core_id".into(),
        })?;
        let p: f64 = parts[1].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad probability".into(),
        })?;
        if id >= n_cores {
            return Err(SimError::Parse {
                line: idx + 1,
                message: format!("core_id {id} out of range for {n_cores} cores"),
            });
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::Parse {
                line: idx + 1,
                message: format!("probability {p} outside [0,1]"),
            });
        }
        weights[id] = p;
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SimError::Config(format!("weights must sum to 1 over all cores, got {sum}")));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fleet(n: usize) -> Vec<ManagedCore> {
        (0..n).map(|id| ManagedCore::new(id, 0.0)).collect()
    }

    #[test]
    fn linux_forced_choice() {
        let mut cores = fleet(3);
        cores[0].assigned_task = Some(0);
        cores[2].assigned_task = Some(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(linux_select_core(&cores, None, &mut rng), Some(1));
        }
    }

    #[test]
    fn linux_all_assigned_returns_none() {
        let mut cores = fleet(2);
        cores[0].assigned_task = Some(0);
        cores[1].assigned_task = Some(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(linux_select_core(&cores, None, &mut rng), None);
    }

    #[test]
    fn linux_uniform_frequencies() {
        // Monte-Carlo oracle: 4 unassigned cores, uniform, each ~25% +/- 1%.
        let cores = fleet(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[linux_select_core(&cores, None, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn linux_weighted_frequencies() {
        // Monte-Carlo oracle: weights 0.7/0.3 reproduce within +/- 0.01.
        let cores = fleet(2);
        let weights = vec![0.7, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[linux_select_core(&cores, Some(&weights), &mut rng).unwrap()] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.7).abs() < 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn least_aged_argmin_and_tiebreak() {
        let cores = fleet(3);
        let mut ledger = CoreWorkLedger::new(3);
        ledger.add(0, 10.0);
        ledger.add(1, 3.0);
        ledger.add(2, 7.0);
        assert_eq!(least_aged_select_core(&cores, &ledger), Some(1));

        // Tie {5,5} on ids {4,2} -> core 2.
        let cores5 = fleet(5);
        let mut ledger5 = CoreWorkLedger::new(5);
        for id in 0..5 {
            ledger5.add(id, if id == 2 || id == 4 { 5.0 } else { 100.0 });
        }
        let subset: Vec<ManagedCore> =
            cores5.into_iter().filter(|c| c.core_id == 2 || c.core_id == 4).collect();
        assert_eq!(least_aged_select_core(&subset, &ledger5), Some(2));

        // Fresh ledger: tie-break to lowest id.
        let cores = fleet(4);
        let ledger = CoreWorkLedger::new(4);
        assert_eq!(least_aged_select_core(&cores, &ledger), Some(0));
    }

    #[test]
    fn least_aged_round_robins_serial_workload() {
        // Each assignment makes the chosen core the most worked, so a serial
        // single-task workload cycles through all cores.
        let mut cores = fleet(4);
        let mut ledger = CoreWorkLedger::new(4);
        let mut order = Vec::new();
        for _ in 0..8 {
            let id = least_aged_select_core(&cores, &ledger).unwrap();
            order.push(id);
            ledger.add(id, 1.0);
            cores[id].assigned_task = Some(0);
            cores[id].assigned_task = None;
        }
        assert_eq!(order, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn weights_csv_parses_and_validates() {
        let w = parse_weights_csv("core_id,probability\n0,0.7\n1,0.3\n", 2).unwrap();
        assert_eq!(w, vec![0.7, 0.3]);
        assert!(parse_weights_csv("core_id,probability\n0,0.5\n", 2).is_err()); // sum != 1
        assert!(parse_weights_csv("id,p\n0,1.0\n", 1).is_err()); // header
        assert!(parse_weights_csv("core_id,probability\n5,1.0\n", 2).is_err()); // range
    }
}
