//! Process-variation sampling of initial core frequencies.
//!
//! The chip is divided into an `n_chip x n_chip` grid; each cell carries a
//! Gaussian random variable `p` with spatial correlation
//! `rho = exp(-alpha * d)` over Euclidean grid distance `d`. A core's initial
//! frequency is `k_prime * min over its section cells of 1/p`, i.e.
//! `k_prime / max(p)` over the section.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Diagonal jitter added to the covariance before factorization; exp(-alpha d)
/// kernels can be numerically singular at small alpha.
const COV_JITTER: f64 = 1e-10;

/// Spatially correlated field of per-cell variation samples plus the
/// core -> grid-cell section mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationGrid {
    pub n_chip: usize,
    pub alpha: f64,
    pub mean_p: f64,
    pub sigma_p: f64,
    /// Row-major `n_chip * n_chip` cell values.
    pub cells: Vec<f64>,
    /// Per-core flat cell indices (the core's critical-path sections).
    pub core_sections: Vec<Vec<usize>>,
}

/// Sample a variation grid. Deterministic given `seed`.
///
/// With `sigma_p = 0` every cell equals `mean_p` exactly (no factorization).
pub fn sample_variation_grid(
    n_chip: usize,
    alpha: f64,
    mean_p: f64,
    sigma_p: f64,
    seed: u64,
) -> Result<VariationGrid> {
    if n_chip < 1 {
        return Err(SimError::InvalidArgument("n_chip must be >= 1".into()));
    }
    if sigma_p < 0.0 || alpha < 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "sigma_p and alpha must be >= 0, got sigma_p={sigma_p} alpha={alpha}"
        )));
    }
    let n_cells = n_chip * n_chip;
    let cells = if sigma_p == 0.0 {
        vec![mean_p; n_cells]
    } else {
        let mut cov = DMatrix::<f64>::zeros(n_cells, n_cells);
        for a in 0..n_cells {
            let (ai, aj) = (a / n_chip, a % n_chip);
            for b in 0..n_cells {
                let (bi, bj) = (b / n_chip, b % n_chip);
                let d = (((ai as f64 - bi as f64).powi(2) + (aj as f64 - bj as f64).powi(2))
                    as f64)
                    .sqrt();
                cov[(a, b)] = sigma_p * sigma_p * (-alpha * d).exp();
            }
            cov[(a, a)] += COV_JITTER;
        }
        let chol = cov.cholesky().ok_or(SimError::CovarianceNotPositiveDefinite)?;
        let l = chol.l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n_cells).map(|_| StandardNormal.sample(&mut rng)).collect();
        (0..n_cells)
            .map(|r| mean_p + (0..=r).map(|c| l[(r, c)] * z[c]).sum::<f64>())
            .collect()
    };
    Ok(VariationGrid {
        n_chip,
        alpha,
        mean_p,
        sigma_p,
        cells,
        core_sections: Vec::new(),
    })
}

/// Partition the grid's cells into one contiguous row-major run per core.
///
/// Cores beyond the cell count wrap around to single-cell sections.
pub fn assign_core_sections(grid: &mut VariationGrid, n_cores: usize) {
    let n_cells = grid.cells.len();
    let mut sections = Vec::with_capacity(n_cores);
    if n_cores <= n_cells {
        for k in 0..n_cores {
            let start = k * n_cells / n_cores;
            let end = (k + 1) * n_cells / n_cores;
            sections.push((start..end).collect());
        }
    } else {
        for k in 0..n_cores {
            sections.push(vec![k % n_cells]);
        }
    }
    grid.core_sections = sections;
}

/// Initial maximum frequency of a core: `k_prime / max(p over its section)`.
pub fn initial_core_frequency(grid: &VariationGrid, core_id: usize, k_prime: f64) -> Result<f64> {
    let section = grid
        .core_sections
        .get(core_id)
        .ok_or_else(|| SimError::InvalidArgument(format!("core {core_id} has no section")))?;
    if section.is_empty() {
        return Err(SimError::InvalidArgument(format!("core {core_id} section is empty")));
    }
    let mut max_p = f64::NEG_INFINITY;
    for &cell in section {
        let p = grid.cells[cell];
        if p <= 0.0 {
            return Err(SimError::ResampleRequired { cell, value: p });
        }
        if p > max_p {
            max_p = p;
        }
    }
    Ok(k_prime / max_p)
}

/// Dump cells as `i,j,p` CSV for reproducibility audits.
pub fn grid_to_csv(grid: &VariationGrid) -> String {
    let mut out = String::from("i,j,p\n");
    for (idx, p) in grid.cells.iter().enumerate() {
        let (i, j) = (idx / grid.n_chip, idx % grid.n_chip);
        out.push_str(&format!("{i},{j},{p}\n"));
    }
    out
}

/// Load cells back from `i,j,p` CSV. Sections are not stored in the CSV and
/// must be reassigned.
pub fn grid_from_csv(text: &str, alpha: f64, mean_p: f64, sigma_p: f64) -> Result<VariationGrid> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "i,j,p" => {}
        _ => {
            return Err(SimError::Parse { line: 1, message: "expected header 'i,j,p'".into() })
        }
    }
    let mut triples = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(SimError::Parse { line: idx + 1, message: "expected 3 fields".into() });
        }
        let i: usize = parts[0].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad i".into(),
        })?;
        let j: usize = parts[1].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad j".into(),
        })?;
        let p: f64 = parts[2].trim().parse().map_err(|_| SimError::Parse {
            line: idx + 1,
            message: "bad p".into(),
        })?;
        triples.push((i, j, p));
    }
    let n_chip = (triples.len() as f64).sqrt().round() as usize;
    if n_chip * n_chip != triples.len() {
        return Err(SimError::Parse {
            line: 0,
            message: format!("cell count {} is not a perfect square", triples.len()),
        });
    }
    let mut cells = vec![0.0; triples.len()];
    for (i, j, p) in triples {
        let idx = i * n_chip + j;
        if idx >= cells.len() {
            return Err(SimError::Parse { line: 0, message: format!("cell ({i},{j}) out of range") });
        }
        cells[idx] = p;
    }
    Ok(VariationGrid { n_chip, alpha, mean_p, sigma_p, cells, core_sections: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_grid_is_exact() {
        let g = sample_variation_grid(10, 1.3, 1.0, 0.0, 7).unwrap();
        assert_eq!(g.cells.len(), 100);
        assert!(g.cells.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let a = sample_variation_grid(5, 1.0, 1.0, 0.05, 42).unwrap();
        let b = sample_variation_grid(5, 1.0, 1.0, 0.05, 42).unwrap();
        let c = sample_variation_grid(5, 1.0, 1.0, 0.05, 43).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn single_cell_matches_marginal_statistics() {
        // Monte-Carlo oracle: the 1x1 grid draw is N(1.0, 0.05^2); over 1e5
        // seeds the sample mean lands within 1.0 +/- 0.001.
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let g = sample_variation_grid(1, 2.0, 1.0, 0.05, seed).unwrap();
            sum += g.cells[0];
            sum_sq += g.cells[0] * g.cells[0];
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((mean - 1.0).abs() < 0.001, "mean {mean}");
        assert!((std - 0.05).abs() < 0.002, "std {std}");
    }

    #[test]
    fn large_alpha_decorrelates_cells() {
        // Monte-Carlo oracle: with alpha large the off-diagonal correlation
        // vanishes; empirical |r| < 0.02 across 1e5 seeds.
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let g = sample_variation_grid(2, 50.0, 1.0, 0.05, seed).unwrap();
            xs.push(g.cells[0]);
            ys.push(g.cells[3]);
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (xs[i] - mx) * (ys[i] - my);
            vx += (xs[i] - mx).powi(2);
            vy += (ys[i] - my).powi(2);
        }
        let r = cov / (vx.sqrt() * vy.sqrt());
        assert!(r.abs() < 0.02, "correlation {r}");
    }

    #[test]
    fn small_alpha_correlates_cells() {
        let n = 20_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let g = sample_variation_grid(2, 0.05, 1.0, 0.05, seed).unwrap();
            xs.push(g.cells[0]);
            ys.push(g.cells[1]);
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (xs[i] - mx) * (ys[i] - my);
            vx += (xs[i] - mx).powi(2);
            vy += (ys[i] - my).powi(2);
        }
        let r = cov / (vx.sqrt() * vy.sqrt());
        assert!(r > 0.9, "correlation {r}");
    }

    #[test]
    fn sections_cover_grid_without_overlap() {
        let mut g = sample_variation_grid(10, 1.0, 1.0, 0.0, 0).unwrap();
        assign_core_sections(&mut g, 40);
        assert_eq!(g.core_sections.len(), 40);
        let mut seen = vec![false; 100];
        for s in &g.core_sections {
            assert!(!s.is_empty());
            for &c in s {
                assert!(c < 100);
                assert!(!seen[c], "cell {c} assigned twice");
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&v| v));
    }

    #[test]
    fn sections_wrap_when_cores_exceed_cells() {
        let mut g = sample_variation_grid(2, 1.0, 1.0, 0.0, 0).unwrap();
        assign_core_sections(&mut g, 6);
        assert_eq!(g.core_sections[4], vec![0]);
        assert_eq!(g.core_sections[5], vec![1]);
    }

    #[test]
    fn initial_frequency_formula() {
        let mut g = sample_variation_grid(2, 1.0, 1.0, 0.0, 0).unwrap();
        g.cells = vec![1.0, 1.0, 0.9, 1.1];
        g.core_sections = vec![vec![0, 1], vec![2, 3], vec![2]];
        assert_eq!(initial_core_frequency(&g, 0, 1.0).unwrap(), 1.0);
        let f1 = initial_core_frequency(&g, 1, 1.0).unwrap();
        assert!((f1 - 1.0 / 1.1).abs() < 1e-12);
        // Single cell {2.0} with k' = 3 -> 1.5.
        g.cells[2] = 2.0;
        assert_eq!(initial_core_frequency(&g, 2, 3.0).unwrap(), 1.5);
    }

    #[test]
    fn non_positive_cell_requires_resample() {
        let mut g = sample_variation_grid(1, 1.0, 1.0, 0.0, 0).unwrap();
        g.cells[0] = -0.1;
        g.core_sections = vec![vec![0]];
        assert!(matches!(
            initial_core_frequency(&g, 0, 1.0),
            Err(SimError::ResampleRequired { .. })
        ));
    }

    #[test]
    fn zero_variance_cores_share_nominal_frequency() {
        let mut g = sample_variation_grid(10, 2.0, 1.25, 0.0, 9).unwrap();
        assign_core_sections(&mut g, 40);
        let k_prime = 2.0;
        for core in 0..40 {
            let f = initial_core_frequency(&g, core, k_prime).unwrap();
            assert!((f - k_prime / 1.25).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut g = sample_variation_grid(3, 1.0, 1.0, 0.05, 5).unwrap();
        assign_core_sections(&mut g, 4);
        let csv = grid_to_csv(&g);
        let back = grid_from_csv(&csv, g.alpha, g.mean_p, g.sigma_p).unwrap();
        assert_eq!(back.n_chip, 3);
        for (a, b) in g.cells.iter().zip(back.cells.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(grid_from_csv("x,y,z\n0,0,1.0\n", 1.0, 1.0, 0.0).is_err());
    }
}
