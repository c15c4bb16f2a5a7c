//! Convergence of the penalized densities `Q_k*` towards `Q*`.

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{AffineStrainProfile, CellProblem, FemOptions};
use crate::error::{Error, Result};

/// Penalty grid used for convergence studies.
pub const DEFAULT_K_GRID: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaRow {
    pub k: f64,
    pub value: f64,
    /// `Q* − Q_k*`
    pub gap: f64,
    pub div_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaTable {
    pub profile: AffineStrainProfile,
    pub constrained: f64,
    pub rows: Vec<GammaRow>,
    /// `max_k k·gap(k)` over the grid.
    pub rate_constant: f64,
    /// Richardson extrapolation in 1/k from the last two rows.
    pub extrapolated: f64,
    pub monotone_tolerance: f64,
}

/// Solves the penalized problem along `k_grid` and the constrained problem,
/// and checks that `Q_k*` is nondecreasing in k.
pub fn gamma_check(
    problem: &CellProblem,
    profile: &AffineStrainProfile,
    k_grid: &[f64],
    opts: &FemOptions,
) -> Result<GammaTable> {
    if k_grid.len() < 2 {
        return Err(Error::InvalidInput("the penalty grid needs at least two values".into()));
    }
    if k_grid.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) || k_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("the penalty grid must be finite, nonnegative and strictly increasing".into()));
    }
    let constrained = problem.solve_constrained(profile, opts)?.energy;
    let sols = k_grid
        .par_iter()
        .map(|&k| problem.solve_penalized(profile, k, opts))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<GammaRow> = k_grid
        .iter()
        .zip(&sols)
        .map(|(&k, s)| GammaRow { k, value: s.energy, gap: constrained - s.energy, div_residual: s.div_residual })
        .collect();
    let tol = 1e-10 * (1.0 + constrained.abs());
    for w in rows.windows(2) {
        if w[1].value < w[0].value - tol {
            return Err(Error::MonotonicityViolation { k_prev: w[0].k, k: w[1].k, prev: w[0].value, next: w[1].value });
        }
    }
    if let Some(last) = rows.last() {
        if last.value > constrained + tol {
            return Err(Error::MonotonicityViolation { k_prev: last.k, k: f64::INFINITY, prev: last.value, next: constrained });
        }
    }
    let rate_constant = rows.iter().map(|r| r.k * r.gap).fold(0.0, f64::max);
    let (a, b) = (rows[rows.len() - 2], rows[rows.len() - 1]);
    let extrapolated = (b.k * b.value - a.k * a.value) / (b.k - a.k);
    Ok(GammaTable { profile: *profile, constrained, rows, rate_constant, extrapolated, monotone_tolerance: tol })
}
