//! Cross-section cell problems.
//!
//! For an affine profile `ξ(x̃) = F(x₂e₂ + x₃e₃) + t e₁` the corrector β
//! minimizes `∫ Q(ξ | ∇̃β)` over the gauge space, either under the hard
//! trace constraint `∂₂β₂ + ∂₃β₃ = −ξ₁` (enforced with a P1 multiplier,
//! Taylor–Hood pairing with P2 correctors) or with the penalty
//! `k ∫ tr(ξ | ∇̃β)²`.
//!
//! Both variants assemble the symmetric saddle system
//!
//! ```text
//! [ K   Bᵀ      Cᵀ ] [ β ]   [ −f ]
//! [ B   −M/k    0  ] [ y ] = [ −g ]
//! [ C   0       0  ] [ z ]   [  0 ]
//! ```
//!
//! where `K` is the elastic stiffness on correctors, `B` the divergence
//! coupling against P1 functions, `M` the P1 mass matrix and `C` the gauge
//! rows. The hard constraint is `1/k = 0`; the multiplier field is
//! `λ = 2y`, which matches `∫ L(ξ|∇̃β) : (0|∇̃φ) = −½ ∫ λ div φ̃`.
//! In the penalized case the trace penalty acts on the L² projection of the
//! trace onto the P1 multiplier space, so `Q_k*` increases monotonically
//! towards the discrete constrained value.

use std::sync::{Arc, Mutex};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{bary_gradients, p1_mass, p2_gradients, p2_values, P2Space};
use crate::linalg::{cg, minres, norm_inf, Csr, Factorization};
use crate::material::{mandel, ElasticTensor};
use crate::mesh::{CrossSection, Point2};
use crate::quadrature::TRI_ORDER4;

/// The pair (F skew, t) with `ξ(x̃) = F(x₂e₂ + x₃e₃) + t e₁`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AffineStrainProfile {
    pub f12: f64,
    pub f13: f64,
    pub f23: f64,
    pub t: f64,
}

impl AffineStrainProfile {
    pub const fn new(f12: f64, f13: f64, f23: f64, t: f64) -> Self {
        Self { f12, f13, f23, t }
    }

    pub fn from_coords(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    /// Reads the upper triangle of a skew matrix.
    pub fn from_skew(f: &Matrix3<f64>, t: f64) -> Self {
        Self::new(f[(0, 1)], f[(0, 2)], f[(1, 2)], t)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.f12, self.f13, self.f23, self.t]
    }

    pub fn skew_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(0.0, self.f12, self.f13, -self.f12, 0.0, self.f23, -self.f13, -self.f23, 0.0)
    }

    pub fn xi(&self, p: Point2) -> Vector3<f64> {
        Vector3::new(self.f12 * p[0] + self.f13 * p[1] + self.t, self.f23 * p[1], -self.f23 * p[0])
    }

    pub fn is_zero(&self) -> bool {
        self.coords().iter().all(|&c| c == 0.0)
    }

    fn scaled_add(&self, other: &Self, s: f64) -> Self {
        let (a, b) = (self.coords(), other.coords());
        Self::from_coords([a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]])
    }
}

impl std::ops::Add for AffineStrainProfile {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.scaled_add(&rhs, 1.0)
    }
}

impl std::ops::Sub for AffineStrainProfile {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.scaled_add(&rhs, -1.0)
    }
}

/// Kernel-fixing constraints of the corrector space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Gauge {
    /// Zero mean and zero mean gradient; the case ξ(0) = 0.
    MeanGradient,
    /// Zero mean and `∫ x̃⊥·β̃ = 0`; the case ξ(0) ≠ 0.
    RotationMoment,
}

impl Gauge {
    /// `t ≠ 0` exactly selects the rotation-moment gauge.
    pub fn for_profile(xi: &AffineStrainProfile) -> Self {
        if xi.t != 0.0 {
            Gauge::RotationMoment
        } else {
            Gauge::MeanGradient
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Mode {
    Constrained,
    /// Penalty weight k ≥ 0; k = 0 is the unconstrained problem.
    Penalized(f64),
}

impl Mode {
    fn key(&self) -> u64 {
        match self {
            Mode::Constrained => u64::MAX,
            Mode::Penalized(k) => k.to_bits(),
        }
    }

    pub fn penalty(&self) -> Option<f64> {
        match self {
            Mode::Constrained => None,
            Mode::Penalized(k) => Some(*k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearSolver {
    /// Sparse LU with iterative refinement.
    Direct,
    /// Preconditioned MINRES from the given start vector (zero if absent).
    Minres { initial: Option<Vec<f64>>, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemOptions {
    pub solver: LinearSolver,
    /// Relative algebraic tolerance.
    pub tol: f64,
    /// Tolerance on the discrete divergence residual of a constrained solve.
    pub constraint_tol: f64,
    /// Use this gauge instead of the one implied by `t`.
    pub gauge: Option<Gauge>,
}

impl Default for FemOptions {
    fn default() -> Self {
        Self { solver: LinearSolver::Direct, tol: 1e-10, constraint_tol: 1e-8, gauge: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSolution {
    pub profile: AffineStrainProfile,
    /// Corrector values at the P2 nodes.
    pub beta: Vec<[f64; 3]>,
    /// Multiplier values at the mesh vertices (zero for k = 0).
    pub lambda: Vec<f64>,
    pub energy: f64,
    /// L² norm of the projection of `tr(ξ|∇̃β)` onto the multiplier space.
    pub div_residual: f64,
    /// Pointwise L² norm of `tr(ξ|∇̃β)`.
    pub div_l2: f64,
    pub gauge: Gauge,
    pub k: Option<f64>,
    /// ∞-norm of the algebraic residual of the saddle system.
    pub algebraic_residual: f64,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellResidualReport {
    /// max over P2 test fields φ of |∫ L(ξ|∇̃β):(0|∇̃φ) + ½ ∫ λ div φ̃|
    pub stationarity: f64,
    /// max over P1 test functions q of |∫ q tr(ξ|∇̃β)|
    pub divergence: f64,
    /// max violation of the gauge rows
    pub gauge: f64,
}

/// Per-quadrature-point data shared by all evaluations.
struct QuadPoint {
    x: Point2,
    w: f64,
    n2: [f64; 6],
    dn2: [[f64; 2]; 6],
    l: [f64; 3],
}

/// Assembled cell-problem operators on a fixed section and material.
pub struct CellProblem {
    cs: CrossSection,
    material: ElasticTensor,
    space: P2Space,
    quad: Vec<Vec<QuadPoint>>,
    stiffness: Csr,
    divergence: Csr,
    pressure_mass: Csr,
    load_basis: [Vec<f64>; 4],
    div_load_basis: [Vec<f64>; 4],
    mean_rows: [Vec<f64>; 3],
    /// ∫∂ⱼφ for component c, ordered (1,2),(1,3),(2,2),(2,3),(3,2),(3,3)
    grad_rows: [Vec<f64>; 6],
    rotation_row: Vec<f64>,
    cache: Mutex<Vec<((Gauge, u64), Arc<Factorization>)>>,
}

impl std::fmt::Debug for CellProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellProblem")
            .field("triangles", &self.cs.triangles().len())
            .field("p2_nodes", &self.space.n_dofs())
            .finish()
    }
}

fn column_matrix(col: usize, v: Vector3<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m.set_column(col, &v);
    m
}

/// Unit profiles in coordinate order (F₁₂, F₁₃, F₂₃, t).
const UNIT_PROFILES: [AffineStrainProfile; 4] = [
    AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0),
    AffineStrainProfile::new(0.0, 1.0, 0.0, 0.0),
    AffineStrainProfile::new(0.0, 0.0, 1.0, 0.0),
    AffineStrainProfile::new(0.0, 0.0, 0.0, 1.0),
];

struct ElementBlocks {
    dofs: [usize; 6],
    verts: [usize; 3],
    k: SMatrix<f64, 18, 18>,
    b: SMatrix<f64, 3, 18>,
    loads: [SVector<f64, 18>; 4],
    div_loads: [[f64; 3]; 4],
    mass: [[f64; 3]; 3],
    mean: [f64; 6],
    grad: [[f64; 2]; 6],
    rot: [[f64; 6]; 2],
}

impl CellProblem {
    pub fn new(cs: &CrossSection, material: &ElasticTensor) -> Result<Self> {
        let report = material.validate();
        if !report.coercive {
            return Err(Error::NotCoercive { min_eigenvalue: report.min_eigenvalue });
        }
        let space = P2Space::new(cs);
        let n2 = space.n_dofs();
        let nv = cs.vertices().len();
        let c6 = *material.sym_matrix();

        let quad: Vec<Vec<QuadPoint>> = (0..cs.triangles().len())
            .map(|t| {
                let g = bary_gradients(cs, t);
                cs.quadrature_points(t)
                    .zip(TRI_ORDER4.iter())
                    .map(|((x, w), qp)| QuadPoint {
                        x,
                        w,
                        n2: p2_values(qp.bary),
                        dn2: p2_gradients(qp.bary, &g),
                        l: qp.bary,
                    })
                    .collect()
            })
            .collect();

        let blocks: Vec<ElementBlocks> = (0..cs.triangles().len())
            .into_par_iter()
            .map(|t| {
                let mut e = ElementBlocks {
                    dofs: *space.element_dofs(t),
                    verts: cs.triangles()[t],
                    k: SMatrix::zeros(),
                    b: SMatrix::zeros(),
                    loads: [SVector::zeros(); 4],
                    div_loads: [[0.0; 3]; 4],
                    mass: p1_mass(cs.triangle_area(t)),
                    mean: [0.0; 6],
                    grad: [[0.0; 2]; 6],
                    rot: [[0.0; 6]; 2],
                };
                for q in &quad[t] {
                    // Mandel vectors of sym(e_c ⊗ (0, ∇φ_a)), local index 6c + a
                    let mut s = [Vector6::zeros(); 18];
                    for c in 0..3 {
                        for a in 0..6 {
                            let mut g = Matrix3::zeros();
                            g[(c, 1)] = q.dn2[a][0];
                            g[(c, 2)] = q.dn2[a][1];
                            s[6 * c + a] = mandel(&g);
                        }
                    }
                    let cs_: Vec<Vector6<f64>> = s.iter().map(|v| c6 * v).collect();
                    for i in 0..18 {
                        for j in i..18 {
                            let v = q.w * s[i].dot(&cs_[j]);
                            e.k[(i, j)] += v;
                            if i != j {
                                e.k[(j, i)] += v;
                            }
                        }
                    }
                    for (u, prof) in UNIT_PROFILES.iter().enumerate() {
                        let xi = prof.xi(q.x);
                        let m0 = c6 * mandel(&column_matrix(0, xi));
                        for i in 0..18 {
                            e.loads[u][i] += q.w * m0.dot(&s[i]);
                        }
                        for p in 0..3 {
                            e.div_loads[u][p] += q.w * q.l[p] * xi[0];
                        }
                    }
                    for p in 0..3 {
                        for a in 0..6 {
                            e.b[(p, 6 + a)] += q.w * q.l[p] * q.dn2[a][0];
                            e.b[(p, 12 + a)] += q.w * q.l[p] * q.dn2[a][1];
                        }
                    }
                    for a in 0..6 {
                        e.mean[a] += q.w * q.n2[a];
                        e.grad[a][0] += q.w * q.dn2[a][0];
                        e.grad[a][1] += q.w * q.dn2[a][1];
                        e.rot[0][a] += -q.w * q.x[1] * q.n2[a];
                        e.rot[1][a] += q.w * q.x[0] * q.n2[a];
                    }
                }
                e
            })
            .collect();

        let gdof = |c: usize, a: usize| c * n2 + a;
        let mut k_trip = Vec::with_capacity(blocks.len() * 324);
        let mut b_trip = Vec::with_capacity(blocks.len() * 36);
        let mut m_trip = Vec::with_capacity(blocks.len() * 9);
        let mut load_basis: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; 3 * n2]);
        let mut div_load_basis: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; nv]);
        let mut mean_rows: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; 3 * n2]);
        let mut grad_rows: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; 3 * n2]);
        let mut rotation_row = vec![0.0; 3 * n2];
        for e in &blocks {
            let gi = |i: usize| gdof(i / 6, e.dofs[i % 6]);
            for i in 0..18 {
                for j in 0..18 {
                    k_trip.push((gi(i), gi(j), e.k[(i, j)]));
                }
                for u in 0..4 {
                    load_basis[u][gi(i)] += e.loads[u][i];
                }
            }
            for p in 0..3 {
                for i in 6..18 {
                    b_trip.push((e.verts[p], gi(i), e.b[(p, i)]));
                }
                for q in 0..3 {
                    m_trip.push((e.verts[p], e.verts[q], e.mass[p][q]));
                }
                for u in 0..4 {
                    div_load_basis[u][e.verts[p]] += e.div_loads[u][p];
                }
            }
            for a in 0..6 {
                for c in 0..3 {
                    mean_rows[c][gdof(c, e.dofs[a])] += e.mean[a];
                    grad_rows[2 * c][gdof(c, e.dofs[a])] += e.grad[a][0];
                    grad_rows[2 * c + 1][gdof(c, e.dofs[a])] += e.grad[a][1];
                }
                rotation_row[gdof(1, e.dofs[a])] += e.rot[0][a];
                rotation_row[gdof(2, e.dofs[a])] += e.rot[1][a];
            }
        }

        Ok(Self {
            cs: cs.clone(),
            material: material.clone(),
            stiffness: Csr::from_triplets(3 * n2, 3 * n2, &k_trip),
            divergence: Csr::from_triplets(nv, 3 * n2, &b_trip),
            pressure_mass: Csr::from_triplets(nv, nv, &m_trip),
            space,
            quad,
            load_basis,
            div_load_basis,
            mean_rows,
            grad_rows,
            rotation_row,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn cross_section(&self) -> &CrossSection {
        &self.cs
    }

    pub fn material(&self) -> &ElasticTensor {
        &self.material
    }

    pub fn space(&self) -> &P2Space {
        &self.space
    }

    fn n_beta(&self) -> usize {
        3 * self.space.n_dofs()
    }

    fn n_mult(&self, mode: Mode) -> usize {
        match mode {
            Mode::Penalized(k) if k == 0.0 => 0,
            _ => self.cs.vertices().len(),
        }
    }

    /// Gauge rows for the given gauge and mode. With the hard constraint the
    /// trace combination `∫∂₂β₂ + ∂₃β₃` is already fixed by the multiplier
    /// row of the constant function, so only its difference is kept.
    fn gauge_rows(&self, gauge: Gauge, mode: Mode) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = self.mean_rows.to_vec();
        match gauge {
            Gauge::MeanGradient => {
                // (1,2),(1,3),(2,3),(3,2)
                for idx in [0, 1, 3, 4] {
                    rows.push(self.grad_rows[idx].clone());
                }
                if mode == Mode::Constrained {
                    rows.push(self.grad_rows[2].iter().zip(&self.grad_rows[5]).map(|(a, b)| a - b).collect());
                } else {
                    rows.push(self.grad_rows[2].clone());
                    rows.push(self.grad_rows[5].clone());
                }
            }
            Gauge::RotationMoment => rows.push(self.rotation_row.clone()),
        }
        rows
    }

    fn gauge_scale(row: &[f64]) -> f64 {
        let m = norm_inf(row);
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    }

    fn kkt_matrix(&self, gauge: Gauge, mode: Mode) -> Csr {
        let nb = self.n_beta();
        let np = self.n_mult(mode);
        let rows = self.gauge_rows(gauge, mode);
        let n = nb + np + rows.len();
        let mut trip = Vec::with_capacity(self.stiffness.nnz() + 2 * self.divergence.nnz() + self.pressure_mass.nnz());
        for r in 0..nb {
            for (c, v) in self.stiffness.row(r) {
                trip.push((r, c, v));
            }
        }
        if np > 0 {
            for r in 0..np {
                for (c, v) in self.divergence.row(r) {
                    trip.push((nb + r, c, v));
                    trip.push((c, nb + r, v));
                }
            }
            if let Mode::Penalized(k) = mode {
                for r in 0..np {
                    for (c, v) in self.pressure_mass.row(r) {
                        trip.push((nb + r, nb + c, -v / k));
                    }
                }
            }
        }
        for (g, row) in rows.iter().enumerate() {
            let s = Self::gauge_scale(row);
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((nb + np + g, c, s * v));
                    trip.push((c, nb + np + g, s * v));
                }
            }
        }
        Csr::from_triplets(n, n, &trip)
    }

    fn factorization(&self, gauge: Gauge, mode: Mode) -> Result<Arc<Factorization>> {
        let key = (gauge, mode.key());
        if let Some((_, f)) = self.cache.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return Ok(f.clone());
        }
        let f = Arc::new(Factorization::new(self.kkt_matrix(gauge, mode))?);
        let mut cache = self.cache.lock().unwrap();
        if let Some((_, existing)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(existing.clone());
        }
        cache.push((key, f.clone()));
        Ok(f)
    }

    fn combine(basis: &[Vec<f64>; 4], xi: &AffineStrainProfile) -> Vec<f64> {
        let c = xi.coords();
        let mut out = vec![0.0; basis[0].len()];
        for (u, b) in basis.iter().enumerate() {
            if c[u] != 0.0 {
                out.iter_mut().zip(b).for_each(|(o, v)| *o += c[u] * v);
            }
        }
        out
    }

    /// Hard-constraint solve.
    pub fn solve_constrained(&self, xi: &AffineStrainProfile, opts: &FemOptions) -> Result<CellSolution> {
        let sol = self.solve(xi, Mode::Constrained, opts)?;
        let scale = 1.0 + xi.coords().iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if sol.div_residual > opts.constraint_tol * scale {
            return Err(Error::ConstraintViolation { residual: sol.div_residual, tolerance: opts.constraint_tol * scale });
        }
        Ok(sol)
    }

    /// Penalized solve with weight `k ≥ 0`.
    pub fn solve_penalized(&self, xi: &AffineStrainProfile, k: f64, opts: &FemOptions) -> Result<CellSolution> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::InvalidInput(format!("penalty weight must be a finite k >= 0, got {k}")));
        }
        self.solve(xi, Mode::Penalized(k), opts)
    }

    pub fn solve(&self, xi: &AffineStrainProfile, mode: Mode, opts: &FemOptions) -> Result<CellSolution> {
        let gauge = opts.gauge.unwrap_or_else(|| Gauge::for_profile(xi));
        if gauge == Gauge::MeanGradient && xi.t != 0.0 {
            return Err(Error::InvalidInput(
                "the mean-gradient gauge is incompatible with t != 0 (∫div β̃ = −t)".into(),
            ));
        }
        let nb = self.n_beta();
        let np = self.n_mult(mode);
        let rows = self.gauge_rows(gauge, mode);
        let n = nb + np + rows.len();
        let f = Self::combine(&self.load_basis, xi);
        let g = Self::combine(&self.div_load_basis, xi);
        let mut rhs = vec![0.0; n];
        rhs[..nb].iter_mut().zip(&f).for_each(|(r, v)| *r = -v);
        if np > 0 {
            rhs[nb..nb + np].iter_mut().zip(&g).for_each(|(r, v)| *r = -v);
        }

        let (x, algebraic_residual, iterations) = match &opts.solver {
            LinearSolver::Direct => {
                let fact = self.factorization(gauge, mode)?;
                let (x, res) = fact.solve(&rhs, opts.tol)?;
                (x, res, None)
            }
            LinearSolver::Minres { initial, max_iter } => {
                let a = self.kkt_matrix(gauge, mode);
                let x0 = match initial {
                    Some(v) if v.len() == n => v.clone(),
                    Some(v) => {
                        return Err(Error::InvalidInput(format!("initial guess has length {}, expected {n}", v.len())))
                    }
                    None => vec![0.0; n],
                };
                let inv_diag = self.minres_preconditioner(&a, nb, np, mode);
                let (x, rep) = minres(&a, &rhs, &x0, &inv_diag, opts.tol, *max_iter);
                if !rep.converged {
                    return Err(Error::NotConverged { iterations: rep.iterations, residual: rep.residual });
                }
                (x, rep.residual, Some(rep.iterations))
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("non-finite corrector".into()));
        }
        let rhs_scale = norm_inf(&rhs).max(1.0);
        if algebraic_residual > 1e-6 * rhs_scale {
            return Err(Error::SolverFailure(format!(
                "saddle system residual {algebraic_residual:.3e} after solve (singular or inf-sup unstable system)"
            )));
        }

        let n2 = self.space.n_dofs();
        let beta: Vec<[f64; 3]> = (0..n2).map(|a| [x[a], x[n2 + a], x[2 * n2 + a]]).collect();
        let lambda: Vec<f64> = if np > 0 {
            x[nb..nb + np].iter().map(|y| 2.0 * y).collect()
        } else {
            vec![0.0; self.cs.vertices().len()]
        };

        // r = ∫ψ tr(ξ|∇̃β) for P1 ψ
        let mut r = self.divergence.mul_vec(&x[..nb]);
        r.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        let proj = self.project_p1(&r);
        let div_residual = crate::linalg::dot(&r, &proj).max(0.0).sqrt();

        let mut energy = self.energy_of(xi, &beta);
        if let Mode::Penalized(k) = mode {
            // k ‖Π tr‖² = k rᵀM⁻¹r
            energy += k * crate::linalg::dot(&r, &proj);
        }
        let div_l2 = self.trace_l2(xi, &beta);

        Ok(CellSolution {
            profile: *xi,
            beta,
            lambda,
            energy,
            div_residual,
            div_l2,
            gauge,
            k: mode.penalty(),
            algebraic_residual,
            iterations,
        })
    }

    fn minres_preconditioner(&self, a: &Csr, nb: usize, np: usize, mode: Mode) -> Vec<f64> {
        let d = a.diagonal();
        let mu_scale = self.material.validate().min_eigenvalue.max(1e-12);
        let mass_d = self.pressure_mass.diagonal();
        (0..a.nrows())
            .map(|i| {
                if i < nb {
                    1.0 / d[i].abs().max(1e-300)
                } else if i < nb + np {
                    let k_term = match mode {
                        Mode::Penalized(k) if k > 0.0 => 1.0 / k,
                        _ => 0.0,
                    };
                    1.0 / (mass_d[i - nb] * (1.0 / mu_scale + k_term))
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// `M⁻¹ r` for the P1 mass matrix.
    fn project_p1(&self, r: &[f64]) -> Vec<f64> {
        cg(&self.pressure_mass, r, 1e-14, 10 * r.len().max(10)).0
    }

    fn eval_gradient(&self, t: usize, q: &QuadPoint, beta: &[[f64; 3]]) -> ([f64; 3], [[f64; 2]; 3]) {
        let dofs = self.space.element_dofs(t);
        let mut val = [0.0; 3];
        let mut grad = [[0.0; 2]; 3];
        for a in 0..6 {
            let b = beta[dofs[a]];
            for c in 0..3 {
                val[c] += q.n2[a] * b[c];
                grad[c][0] += q.dn2[a][0] * b[c];
                grad[c][1] += q.dn2[a][1] * b[c];
            }
        }
        (val, grad)
    }

    /// `(ξ | ∇̃β)` at a quadrature point.
    fn strain(&self, xi: &AffineStrainProfile, t: usize, q: &QuadPoint, beta: &[[f64; 3]]) -> Matrix3<f64> {
        let (_, grad) = self.eval_gradient(t, q, beta);
        let x = xi.xi(q.x);
        Matrix3::new(
            x[0], grad[0][0], grad[0][1], //
            x[1], grad[1][0], grad[1][1], //
            x[2], grad[2][0], grad[2][1],
        )
    }

    fn for_each_point(&self, mut f: impl FnMut(usize, &QuadPoint)) {
        for (t, pts) in self.quad.iter().enumerate() {
            for q in pts {
                f(t, q);
            }
        }
    }

    /// `∫ Q(ξ | ∇̃β)`.
    pub fn energy_of(&self, xi: &AffineStrainProfile, beta: &[[f64; 3]]) -> f64 {
        let mut e = 0.0;
        self.for_each_point(|t, q| e += q.w * self.material.evaluate_q(&self.strain(xi, t, q, beta)));
        e
    }

    fn trace_l2(&self, xi: &AffineStrainProfile, beta: &[[f64; 3]]) -> f64 {
        let mut s = 0.0;
        self.for_each_point(|t, q| s += q.w * self.strain(xi, t, q, beta).trace().powi(2));
        s.sqrt()
    }

    /// `(∫β, ∫∇̃β, ∫x̃⊥·β̃)`.
    pub fn gauge_values(&self, beta: &[[f64; 3]]) -> ([f64; 3], [[f64; 2]; 3], f64) {
        let (mut mean, mut grad, mut rot) = ([0.0; 3], [[0.0; 2]; 3], 0.0);
        self.for_each_point(|t, q| {
            let (v, g) = self.eval_gradient(t, q, beta);
            for c in 0..3 {
                mean[c] += q.w * v[c];
                grad[c][0] += q.w * g[c][0];
                grad[c][1] += q.w * g[c][1];
            }
            rot += q.w * (-q.x[1] * v[1] + q.x[0] * v[2]);
        });
        (mean, grad, rot)
    }

    /// First moments `(M̂, M̌) = (∫x₂ M, ∫x₃ M)` of the stress `M = L(ξ|∇̃β)`.
    pub fn stress_moments(&self, sol: &CellSolution) -> (Matrix3<f64>, Matrix3<f64>) {
        let (mut hat, mut check) = (Matrix3::zeros(), Matrix3::zeros());
        self.for_each_point(|t, q| {
            let m = self.material.apply(&self.strain(&sol.profile, t, q, &sol.beta));
            hat += m * (q.w * q.x[0]);
            check += m * (q.w * q.x[1]);
        });
        (hat, check)
    }

    /// First moments `(∫x₂λ, ∫x₃λ)` of the multiplier.
    pub fn multiplier_moments(&self, sol: &CellSolution) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for (t, tri) in self.cs.triangles().iter().enumerate() {
            for q in &self.quad[t] {
                let lam: f64 = (0..3).map(|p| q.l[p] * sol.lambda[tri[p]]).sum();
                a += q.w * q.x[0] * lam;
                b += q.w * q.x[1] * lam;
            }
        }
        (a, b)
    }

    /// `‖β − β_exact‖_L²` and `‖β_exact‖_L²`.
    pub fn l2_error(&self, beta: &[[f64; 3]], exact: impl Fn(Point2) -> [f64; 3]) -> (f64, f64) {
        let (mut err, mut norm) = (0.0, 0.0);
        self.for_each_point(|t, q| {
            let (v, _) = self.eval_gradient(t, q, beta);
            let e = exact(q.x);
            for c in 0..3 {
                err += q.w * (v[c] - e[c]).powi(2);
                norm += q.w * e[c] * e[c];
            }
        });
        (err.sqrt(), norm.sqrt())
    }

    pub fn h1_norm(&self, beta: &[[f64; 3]]) -> f64 {
        let mut s = 0.0;
        self.for_each_point(|t, q| {
            let (v, g) = self.eval_gradient(t, q, beta);
            for c in 0..3 {
                s += q.w * (v[c] * v[c] + g[c][0] * g[c][0] + g[c][1] * g[c][1]);
            }
        });
        s.sqrt()
    }

    pub fn profile_l2_norm(&self, xi: &AffineStrainProfile) -> f64 {
        self.cs.integrate(|p| xi.xi(p).norm_squared()).sqrt()
    }

    /// Weak-form residuals of the optimality system for a candidate solution.
    pub fn el_residual(&self, sol: &CellSolution) -> CellResidualReport {
        let nb = self.n_beta();
        let n2 = self.space.n_dofs();
        let x: Vec<f64> = (0..nb).map(|i| sol.beta[i % n2][i / n2]).collect();
        let f = Self::combine(&self.load_basis, &sol.profile);
        let g = Self::combine(&self.div_load_basis, &sol.profile);
        let kx = self.stiffness.mul_vec(&x);
        let bt = self.divergence.mul_transpose_vec(&sol.lambda);
        let stationarity = (0..nb).fold(0.0f64, |m, i| m.max((kx[i] + f[i] + 0.5 * bt[i]).abs()));
        let bx = self.divergence.mul_vec(&x);
        let divergence = bx.iter().zip(&g).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
        let gauge = self
            .gauge_rows(sol.gauge, Mode::Penalized(1.0))
            .iter()
            .map(|row| crate::linalg::dot(row, &x).abs())
            .fold(0.0, f64::max);
        CellResidualReport { stationarity, divergence, gauge }
    }
}

/// Reduced density as a symmetric 4×4 matrix on (F₁₂, F₁₃, F₂₃, t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStarForm {
    pub matrix: [[f64; 4]; 4],
    pub alpha: f64,
    pub source: QStarSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QStarSource {
    FemConstrained,
    FemPenalized(f64),
    IsotropicClosedForm,
}

impl QStarForm {
    pub fn diagonal(d: [f64; 4], source: QStarSource) -> Self {
        let mut matrix = [[0.0; 4]; 4];
        for i in 0..4 {
            matrix[i][i] = d[i];
        }
        Self { matrix, alpha: d[3], source }
    }

    pub fn evaluate(&self, xi: &AffineStrainProfile) -> f64 {
        let c = xi.coords();
        (0..4).map(|i| (0..4).map(|j| c[i] * self.matrix[i][j] * c[j]).sum::<f64>()).sum()
    }

    /// `Q*(A, s)` for a skew matrix A.
    pub fn evaluate_skew(&self, a: &Matrix3<f64>, s: f64) -> f64 {
        self.evaluate(&AffineStrainProfile::from_skew(a, s))
    }

    /// Upper-left 3×3 block acting on (F₁₂, F₁₃, F₂₃).
    pub fn bending_block(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.matrix[i][j])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest |entry| of the F–t coupling column.
    pub fn cross_block(&self) -> f64 {
        (0..3).map(|i| self.matrix[i][3].abs().max(self.matrix[3][i].abs())).fold(0.0, f64::max)
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((self.matrix[i][j] - self.matrix[j][i]).abs());
            }
        }
        d
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = nalgebra::Matrix4::from_fn(|i, j| 0.5 * (self.matrix[i][j] + self.matrix[j][i]));
        m.symmetric_eigen().eigenvalues.min()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.matrix.iter_mut().flatten().for_each(|v| *v *= s);
        out.alpha *= s;
        out
    }
}

/// Q* (or Q_k*) from ten cell solves: the four unit profiles and the six
/// pairwise sums, with off-diagonals from `Q(a,b) = ½(Q(a+b) − Q(a) − Q(b))`.
pub fn reduce_qstar(problem: &CellProblem, mode: Mode, opts: &FemOptions) -> Result<QStarForm> {
    let mut profiles: Vec<AffineStrainProfile> = UNIT_PROFILES.to_vec();
    let mut pairs = Vec::new();
    for i in 0..4 {
        for j in (i + 1)..4 {
            profiles.push(UNIT_PROFILES[i] + UNIT_PROFILES[j]);
            pairs.push((i, j));
        }
    }
    let energies: Vec<f64> = profiles
        .par_iter()
        .map(|xi| match mode {
            Mode::Constrained => problem.solve_constrained(xi, opts).map(|s| s.energy),
            Mode::Penalized(k) => problem.solve_penalized(xi, k, opts).map(|s| s.energy),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = [[0.0; 4]; 4];
    for i in 0..4 {
        matrix[i][i] = energies[i];
    }
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let off = 0.5 * (energies[4 + p] - energies[i] - energies[j]);
        matrix[i][j] = off;
        matrix[j][i] = off;
    }
    let source = match mode {
        Mode::Constrained => QStarSource::FemConstrained,
        Mode::Penalized(k) => QStarSource::FemPenalized(k),
    };
    Ok(QStarForm { matrix, alpha: splitting_alpha_for(problem.material(), mode)?, source })
}

fn splitting_alpha_for(l: &ElasticTensor, mode: Mode) -> Result<f64> {
    match mode {
        Mode::Constrained => splitting_alpha(l),
        Mode::Penalized(k) => splitting_alpha_penalized(l, k),
    }
}

/// `α = min { Q(e₁|a|b) : a, b ∈ ℝ³, a₂ + b₃ = −1 }`, solved through its
/// KKT system. The in-plane rotation `a₃ = −b₂` leaves Q unchanged and is
/// fixed by the extra row `a₃ − b₂ = 0`.
pub fn splitting_alpha(l: &ElasticTensor) -> Result<f64> {
    affine_minimum(l, None)
}

/// Penalized analogue `min Q(e₁|a|b) + k (1 + a₂ + b₃)²`.
pub fn splitting_alpha_penalized(l: &ElasticTensor, k: f64) -> Result<f64> {
    affine_minimum(l, Some(k))
}

fn affine_minimum(l: &ElasticTensor, penalty: Option<f64>) -> Result<f64> {
    use nalgebra::{DMatrix, DVector};
    let c = *l.sym_matrix();
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    // Mandel coordinates of (e₁|a|b) = m0 + P z with z = (a₁,a₂,a₃,b₁,b₂,b₃)
    let m0 = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut p = SMatrix::<f64, 6, 6>::zeros();
    p[(1, 1)] = 1.0;
    p[(2, 5)] = 1.0;
    p[(3, 2)] = s2;
    p[(3, 4)] = s2;
    p[(4, 3)] = s2;
    p[(5, 0)] = s2;
    let mut h = 2.0 * p.transpose() * c * p;
    let mut grad0 = 2.0 * p.transpose() * c * m0;
    let mut tr_row = SVector::<f64, 6>::zeros();
    tr_row[1] = 1.0;
    tr_row[5] = 1.0;
    if let Some(k) = penalty {
        // k (1 + a₂ + b₃)²
        h += 2.0 * k * tr_row * tr_row.transpose();
        grad0 += 2.0 * k * tr_row;
    }
    let mut cons: Vec<(SVector<f64, 6>, f64)> = Vec::new();
    if penalty.is_none() {
        cons.push((tr_row, -1.0));
    }
    let mut rot = SVector::<f64, 6>::zeros();
    rot[2] = 1.0;
    rot[4] = -1.0;
    cons.push((rot, 0.0));
    let n = 6 + cons.len();
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    kkt.view_mut((0, 0), (6, 6)).copy_from(&h);
    for i in 0..6 {
        rhs[i] = -grad0[i];
    }
    for (r, (row, val)) in cons.iter().enumerate() {
        for i in 0..6 {
            kkt[(6 + r, i)] = row[i];
            kkt[(i, 6 + r)] = row[i];
        }
        rhs[6 + r] = *val;
    }
    let svd = kkt.clone().svd(false, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::SingularKkt(format!("condition estimate {:.3e}", smax / smin.max(f64::MIN_POSITIVE))));
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularKkt("LU solve failed".into()))?;
    let z = SVector::<f64, 6>::from_fn(|i, _| sol[i]);
    let m = m0 + p * z;
    let mut val = m.dot(&(c * m));
    if let Some(k) = penalty {
        val += k * (1.0 + z[1] + z[5]).powi(2);
    }
    Ok(val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disk_problem(r: usize) -> CellProblem {
        let cs = CrossSection::generate_disk(r).unwrap();
        CellProblem::new(&cs, &ElasticTensor::isotropic(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_profile_gives_zero_solution() {
        let p = disk_problem(1);
        let s = p.solve_constrained(&AffineStrainProfile::default(), &FemOptions::default()).unwrap();
        assert!(s.beta.iter().flatten().all(|v| v.abs() < 1e-14));
        assert!(s.lambda.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(s.energy, 0.0);
        let sp = p.solve_penalized(&AffineStrainProfile::default(), 10.0, &FemOptions::default()).unwrap();
        assert_eq!(sp.energy, 0.0);
    }

    #[test]
    fn bending_profile_on_disk() {
        let p = disk_problem(3);
        let s = p.solve_constrained(&AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0), &FemOptions::default()).unwrap();
        let exact = 3.0 / (4.0 * PI);
        assert!((s.energy - exact).abs() / exact < 0.01, "energy {}", s.energy);
        assert!(s.div_residual < 1e-10);
        assert_eq!(s.gauge, Gauge::MeanGradient);
        let (mean, grad, _) = p.gauge_values(&s.beta);
        assert!(mean.iter().all(|v| v.abs() < 1e-10));
        assert!(grad.iter().flatten().all(|v| v.abs() < 1e-10), "{grad:?}");
    }

    #[test]
    fn stretching_profile_uses_rotation_gauge() {
        let p = disk_problem(2);
        let s = p.solve_constrained(&AffineStrainProfile::new(0.0, 0.0, 0.0, 1.0), &FemOptions::default()).unwrap();
        assert_eq!(s.gauge, Gauge::RotationMoment);
        assert!((s.energy - 3.0).abs() < 1e-9, "energy {}", s.energy);
        let (mean, _, rot) = p.gauge_values(&s.beta);
        assert!(mean.iter().all(|v| v.abs() < 1e-10) && rot.abs() < 1e-10);
    }

    #[test]
    fn mean_gradient_gauge_rejects_stretching() {
        let p = disk_problem(1);
        let opts = FemOptions { gauge: Some(Gauge::MeanGradient), ..Default::default() };
        assert!(p.solve_constrained(&AffineStrainProfile::new(0.0, 0.0, 0.0, 1.0), &opts).is_err());
    }

    #[test]
    fn penalized_unconstrained_limit() {
        // k = 0, λ = μ = 1: μ(3λ+2μ)/(λ+μ) t² = 5/2
        let p = disk_problem(2);
        let s = p.solve_penalized(&AffineStrainProfile::new(0.0, 0.0, 0.0, 1.0), 0.0, &FemOptions::default()).unwrap();
        assert!((s.energy - 2.5).abs() < 1e-9, "{}", s.energy);
        assert!(p.solve_penalized(&AffineStrainProfile::default(), -1.0, &FemOptions::default()).is_err());
    }

    #[test]
    fn el_residual_detects_perturbation() {
        let p = disk_problem(1);
        let xi = AffineStrainProfile::new(0.3, -0.2, 0.5, 0.0);
        let s = p.solve_constrained(&xi, &FemOptions::default()).unwrap();
        let rep = p.el_residual(&s);
        assert!(rep.stationarity < 1e-8 && rep.divergence < 1e-8 && rep.gauge < 1e-10, "{rep:?}");
        let mut bad = s.clone();
        for (b, x) in bad.beta.iter_mut().zip(p.space().nodes()) {
            b[0] += 0.1 * x[0] * x[0];
        }
        assert!(p.el_residual(&bad).stationarity > 1e-4);
    }

    #[test]
    fn alpha_isotropic() {
        for lambda in [-0.5, 0.0, 1.0, 10.0] {
            let a = splitting_alpha(&ElasticTensor::isotropic(lambda, 1.0).unwrap()).unwrap();
            assert!((a - 3.0).abs() < 1e-10, "λ={lambda}: {a}");
        }
        let a2 = splitting_alpha(&ElasticTensor::isotropic(1.0, 2.0).unwrap()).unwrap();
        assert!((a2 - 6.0).abs() < 1e-10);
        let ak = splitting_alpha_penalized(&ElasticTensor::isotropic(1.0, 1.0).unwrap(), 0.0).unwrap();
        assert!((ak - 2.5).abs() < 1e-10);
    }

    #[test]
    fn alpha_matches_brute_force_minimization() {
        // oracle: dense grid over the free coordinates followed by a
        // local coordinate refinement, with a₂ = −1 − b₃ eliminated
        use nalgebra::Matrix6;
        let mut m = Matrix6::identity() * 1.5;
        m[(0, 1)] = 0.4;
        m[(1, 0)] = 0.4;
        m[(3, 5)] = 0.3;
        m[(5, 3)] = 0.3;
        m[(2, 4)] = -0.2;
        m[(4, 2)] = -0.2;
        let l = ElasticTensor::general(m).unwrap();
        let q = |z: &[f64; 5]| {
            // z = (a₁, a₃, b₁, b₂, b₃), a₂ = −1 − b₃
            let g = Matrix3::new(1.0, z[0], z[2], 0.0, -1.0 - z[4], z[3], 0.0, z[1], z[4]);
            l.evaluate_q(&g)
        };
        let mut best = [0.0; 5];
        let mut step = 0.5;
        let mut val = q(&best);
        while step > 1e-9 {
            let mut improved = false;
            for i in 0..5 {
                for s in [-step, step] {
                    let mut c = best;
                    c[i] += s;
                    let v = q(&c);
                    if v < val {
                        val = v;
                        best = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let a = splitting_alpha(&l).unwrap();
        assert!((a - val).abs() < 1e-9, "kkt {a} vs search {val}");
    }

    #[test]
    fn alpha_rejects_noncoercive() {
        let l = ElasticTensor::general_unchecked(nalgebra::Matrix6::zeros()).unwrap();
        assert!(matches!(splitting_alpha(&l), Err(Error::SingularKkt(_))));
    }
}
