//! Sparse storage and the linear solvers behind the saddle-point systems.
//!
//! The default path is a sparse LU factorization with partial pivoting
//! (faer) followed by a few steps of iterative refinement. MINRES with a
//! diagonal preconditioner is available as an iterative alternative for
//! symmetric indefinite systems, and CG for SPD mass matrices.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds the matrix, summing duplicate entries. Summation follows the
    /// triplet order, so identical input gives bit-identical output.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < nrows && c < ncols);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (s, e) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(s..e);
            order.sort_by_key(|&k| cols[k]);
            let mut last = usize::MAX;
            for &k in &order {
                if cols[k] == last {
                    *out_vals.last_mut().unwrap() += vals[k];
                } else {
                    out_cols.push(cols[k]);
                    out_vals.push(vals[k]);
                    last = cols[k];
                }
            }
            row_ptr[r + 1] = out_cols.len();
        }
        Self { nrows, ncols, row_ptr, cols: out_cols, vals: out_vals }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `Aᵀ y`
    pub fn mul_transpose_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).find(|&(c, _)| c == r).map_or(0.0, |(_, v)| v))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trip: Vec<Triplet<usize, usize, f64>> = (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| Triplet::new(r, c, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| Error::SolverFailure(format!("sparse matrix construction failed: {e:?}")))
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factorized square system.
pub struct Factorization {
    matrix: Csr,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.matrix.nrows).field("nnz", &self.matrix.nnz()).finish()
    }
}

impl Factorization {
    pub fn new(matrix: Csr) -> Result<Self> {
        if matrix.nrows != matrix.ncols {
            return Err(Error::SolverFailure("matrix is not square".into()));
        }
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::SolverFailure(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { matrix, lu })
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves with iterative refinement until the relative residual drops
    /// below `tol`. Returns the solution and the final residual ∞-norm.
    pub fn solve(&self, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
        let scale = norm_inf(rhs).max(f64::MIN_POSITIVE);
        let mut x = self.raw_solve(rhs);
        let mut resid = self.residual(&x, rhs);
        let mut rnorm = norm_inf(&resid);
        for _ in 0..4 {
            if !rnorm.is_finite() || rnorm <= tol * scale {
                break;
            }
            let dx = self.raw_solve(&resid);
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            resid = self.residual(&x, rhs);
            let next = norm_inf(&resid);
            if next >= rnorm {
                rnorm = next;
                break;
            }
            rnorm = next;
        }
        if !rnorm.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("factorization produced non-finite values (singular system)".into()));
        }
        Ok((x, rnorm))
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let ax = self.matrix.mul_vec(x);
        rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterativeReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems, with
/// an SPD diagonal preconditioner given by its inverse entries.
pub fn minres(
    a: &Csr,
    b: &[f64],
    x0: &[f64],
    inv_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, IterativeReport) {
    let n = b.len();
    let mut x = x0.to_vec();
    let ax = a.mul_vec(&x);
    let mut r1: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut y: Vec<f64> = r1.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut beta1 = dot(&r1, &y);
    let bnorm = norm_inf(b).max(f64::MIN_POSITIVE);
    if beta1 <= 0.0 {
        let res = norm_inf(&r1);
        return (x, IterativeReport { iterations: 0, residual: res, converged: res <= tol * bnorm });
    }
    beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let check_every = 25;
    for it in 1..=max_iter {
        iterations = it;
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
        let mut yv = a.mul_vec(&v);
        if it >= 2 {
            let f = beta / oldb;
            yv.iter_mut().zip(&r1).for_each(|(a, r)| *a -= f * r);
        }
        let alfa = dot(&v, &yv);
        let f = alfa / beta;
        yv.iter_mut().zip(&r2).for_each(|(a, r)| *a -= f * r);
        r1 = std::mem::replace(&mut r2, yv);
        y = r2.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) * denom).collect();
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += phi * wi);
        if it % check_every == 0 || phibar.abs() <= 1e-3 * tol * beta1 || beta == 0.0 {
            let ax = a.mul_vec(&x);
            let res = b.iter().zip(&ax).fold(0.0f64, |m, (bi, ai)| m.max((bi - ai).abs()));
            if res <= tol * bnorm {
                converged = true;
                break;
            }
            if beta == 0.0 {
                break;
            }
        }
    }
    let ax = a.mul_vec(&x);
    let residual = b.iter().zip(&ax).fold(0.0f64, |m, (bi, ai)| m.max((bi - ai).abs()));
    converged |= residual <= tol * bnorm;
    (x, IterativeReport { iterations, residual, converged })
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
pub fn cg(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, IterativeReport) {
    let n = b.len();
    let inv: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (x, IterativeReport { iterations: 0, residual: 0.0, converged: true });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let alpha = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
        let rn = dot(&r, &r).sqrt();
        if rn <= tol * bnorm {
            return (x, IterativeReport { iterations: it, residual: rn, converged: true });
        }
        z = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = z.iter().zip(&p).map(|(z, p)| z + beta * p).collect();
    }
    let rn = dot(&r, &r).sqrt();
    (x, IterativeReport { iterations: max_iter, residual: rn, converged: rn <= tol * bnorm })
}
