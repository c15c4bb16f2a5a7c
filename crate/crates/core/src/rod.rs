//! One-dimensional rod fields and the limit energies built on a `QStarForm`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{AffineStrainProfile, CellProblem, FemOptions, QStarForm};
use crate::error::{Error, Result};
use crate::quadrature::GAUSS5_UNIT;

const MAX_SPACING_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid1D {
    length: f64,
    nodes: Vec<f64>,
}

impl Grid1D {
    pub fn uniform(length: f64, intervals: usize) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 intervals, got {intervals}")));
        }
        let nodes = (0..=intervals).map(|i| length * i as f64 / intervals as f64).collect();
        Self::new(nodes)
    }

    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidInput("a grid needs at least 3 nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidInput(format!("grid must start at 0, starts at {}", nodes[0])));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("grid nodes must be finite and strictly increasing".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for w in nodes.windows(2) {
            lo = lo.min(w[1] - w[0]);
            hi = hi.max(w[1] - w[0]);
        }
        if hi / lo > MAX_SPACING_RATIO {
            return Err(Error::InvalidInput(format!("spacing ratio {:.2} exceeds {MAX_SPACING_RATIO}", hi / lo)));
        }
        Ok(Self { length: *nodes.last().unwrap(), nodes })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.n_intervals()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n_nodes();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.spacing(i - 1) } else { 0.0 };
                let right = if i + 1 < n { self.spacing(i) } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Nodal derivative of nodal data: three-point centered stencils inside,
    /// one-sided second-order stencils at the ends.
    pub fn differentiate(&self, y: &[f64]) -> Vec<f64> {
        let x = &self.nodes;
        let n = x.len();
        let three_point = |i0: usize, at: usize| {
            let (x0, x1, x2) = (x[i0], x[i0 + 1], x[i0 + 2]);
            let t = x[at];
            let d0 = ((t - x1) + (t - x2)) / ((x0 - x1) * (x0 - x2));
            let d1 = ((t - x0) + (t - x2)) / ((x1 - x0) * (x1 - x2));
            let d2 = ((t - x0) + (t - x1)) / ((x2 - x0) * (x2 - x1));
            d0 * y[i0] + d1 * y[i0 + 1] + d2 * y[i0 + 2]
        };
        (0..n)
            .map(|i| match i {
                0 => three_point(0, 0),
                _ if i == n - 1 => three_point(n - 3, n - 1),
                _ => three_point(i - 1, i),
            })
            .collect()
    }

    /// Cumulative trapezoid integral starting from zero.
    pub fn cumulative(&self, y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(y.len());
        out.push(0.0);
        for i in 0..self.n_intervals() {
            out.push(out[i] + 0.5 * self.spacing(i) * (y[i] + y[i + 1]));
        }
        out
    }

    pub fn integrate(&self, y: &[f64]) -> f64 {
        self.weights().iter().zip(y).map(|(w, v)| w * v).sum()
    }
}

/// Skew matrix with `A₁₂ = a[0]`, `A₁₃ = a[1]`, `A₂₃ = a[2]`.
pub fn skew_from_entries(a: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(0.0, a[0], a[1], -a[0], 0.0, a[2], -a[1], -a[2], 0.0)
}

pub fn skew_entries(a: &Matrix3<f64>) -> [f64; 3] {
    [a[(0, 1)], a[(0, 2)], a[(1, 2)]]
}

/// Rotation vector ω with `ω̂ = A`.
pub fn axial(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(-a[2], a[1], -a[0])
}

/// Inverse of [`axial`].
pub fn entries_from_axial(w: &Vector3<f64>) -> [f64; 3] {
    [-w[2], w[1], -w[0]]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameField {
    grid: Grid1D,
    rotations: Vec<UnitQuaternion<f64>>,
}

impl FrameField {
    pub fn new(grid: Grid1D, rotations: Vec<UnitQuaternion<f64>>) -> Result<Self> {
        if rotations.len() != grid.n_nodes() {
            return Err(Error::InvalidInput(format!(
                "{} rotations for {} grid nodes",
                rotations.len(),
                grid.n_nodes()
            )));
        }
        for q in &rotations {
            let n = q.as_ref().norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("quaternion norm {n} is not 1")));
            }
        }
        Ok(Self { grid, rotations })
    }

    /// Builds from raw (w, x, y, z) components, renormalizing each.
    pub fn from_components(grid: Grid1D, q: &[[f64; 4]]) -> Result<Self> {
        let rotations = q
            .iter()
            .map(|c| {
                let quat = nalgebra::Quaternion::new(c[0], c[1], c[2], c[3]);
                let n = quat.norm();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::InvalidInput("zero or non-finite quaternion".into()));
                }
                Ok(UnitQuaternion::new_normalize(quat))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, rotations)
    }

    pub fn straight(grid: Grid1D) -> Self {
        let n = grid.n_nodes();
        Self { grid, rotations: vec![UnitQuaternion::identity(); n] }
    }

    /// Integrates `R′ = RA` exactly for an interval-wise constant `A`.
    pub fn from_intervals(grid: Grid1D, r0: UnitQuaternion<f64>, a: &[[f64; 3]]) -> Result<Self> {
        if a.len() != grid.n_intervals() {
            return Err(Error::InvalidInput("one skew field entry per interval expected".into()));
        }
        let mut rotations = Vec::with_capacity(grid.n_nodes());
        rotations.push(r0);
        for (i, ai) in a.iter().enumerate() {
            let step = UnitQuaternion::from_scaled_axis(axial(*ai) * grid.spacing(i));
            rotations.push(rotations[i] * step);
        }
        Self::new(grid, rotations)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn rotations(&self) -> &[UnitQuaternion<f64>] {
        &self.rotations
    }

    pub fn matrix(&self, i: usize) -> Matrix3<f64> {
        self.rotations[i].to_rotation_matrix().into_inner()
    }

    /// Left multiplication `R ↦ Q₀R`.
    pub fn rotated(&self, q0: &UnitQuaternion<f64>) -> Self {
        Self { grid: self.grid.clone(), rotations: self.rotations.iter().map(|r| q0 * r).collect() }
    }

    /// Per-interval `(A₁₂, A₁₃, A₂₃)` from `log(RᵢᵀRᵢ₊₁)/Δᵢ`.
    pub fn a_intervals(&self) -> Vec<[f64; 3]> {
        (0..self.grid.n_intervals())
            .map(|i| {
                let w = (self.rotations[i].inverse() * self.rotations[i + 1]).scaled_axis();
                entries_from_axial(&(w / self.grid.spacing(i)))
            })
            .collect()
    }

    pub fn a_matrices(&self) -> Vec<Matrix3<f64>> {
        self.a_intervals().into_iter().map(skew_from_entries).collect()
    }

    /// Nodal A by cubic interpolation of the interval values (extrapolation at the ends).
    pub fn a_nodal(&self) -> Vec<[f64; 3]> {
        interval_to_nodal(&self.grid, &self.a_intervals())
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (i, q) in self.rotations.iter().enumerate() {
            let n = q.as_ref().norm();
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("node {i}: quaternion norm {n}")));
            }
            let r = self.matrix(i);
            let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
            if orth > 1e-10 || (r.determinant() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!("node {i}: matrix is not a rotation")));
            }
        }
        Ok(())
    }
}

pub(crate) fn interval_to_nodal(grid: &Grid1D, a: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let m = a.len();
    let mid: Vec<f64> = (0..m).map(|i| 0.5 * (grid.nodes()[i] + grid.nodes()[i + 1])).collect();
    let width = m.min(4);
    (0..=m)
        .map(|k| {
            let x = grid.nodes()[k];
            let j0 = k.saturating_sub(width / 2).min(m - width);
            let mut out = [0.0; 3];
            for j in j0..j0 + width {
                let l: f64 = (j0..j0 + width).filter(|&i| i != j).map(|i| (x - mid[i]) / (mid[j] - mid[i])).product();
                for c in 0..3 {
                    out[c] += l * a[j][c];
                }
            }
            out
        })
        .collect()
}

/// Limit displacement fields: v cubic Hermite, w and z piecewise linear.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RodProfile {
    pub grid: Grid1D,
    pub v1: Vec<f64>,
    pub dv1: Vec<f64>,
    pub v2: Vec<f64>,
    pub dv2: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// α ∈ (2, 3)
    Open23,
    /// α = 3
    Equal3,
    /// α > 3
    Above3,
}

impl RodProfile {
    pub fn new(
        grid: Grid1D,
        v1: Vec<f64>,
        dv1: Vec<f64>,
        v2: Vec<f64>,
        dv2: Vec<f64>,
        w: Vec<f64>,
        z: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        let mut lens = vec![v1.len(), dv1.len(), v2.len(), dv2.len(), w.len()];
        if let Some(z) = &z {
            lens.push(z.len());
        }
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidInput(format!("profile columns must have {n} entries")));
        }
        let all = v1.iter().chain(&dv1).chain(&v2).chain(&dv2).chain(&w).chain(z.iter().flatten());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite profile value".into()));
        }
        Ok(Self { grid, v1, dv1, v2, dv2, w, z })
    }

    /// Samples closed-form fields at the grid nodes.
    pub fn from_fns(
        grid: Grid1D,
        v: impl Fn(f64) -> [f64; 4],
        w: impl Fn(f64) -> f64,
        z: Option<&dyn Fn(f64) -> f64>,
    ) -> Result<Self> {
        let x = grid.nodes().to_vec();
        let vv: Vec<[f64; 4]> = x.iter().map(|&t| v(t)).collect();
        Self::new(
            grid,
            vv.iter().map(|c| c[0]).collect(),
            vv.iter().map(|c| c[1]).collect(),
            vv.iter().map(|c| c[2]).collect(),
            vv.iter().map(|c| c[3]).collect(),
            x.iter().map(|&t| w(t)).collect(),
            z.map(|f| x.iter().map(|&t| f(t)).collect()),
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        let sc = |v: &Vec<f64>| v.iter().map(|x| s * x).collect::<Vec<_>>();
        Self {
            grid: self.grid.clone(),
            v1: sc(&self.v1),
            dv1: sc(&self.dv1),
            v2: sc(&self.v2),
            dv2: sc(&self.dv2),
            w: sc(&self.w),
            z: self.z.as_ref().map(sc),
        }
    }

    /// `(v, v′, v″)` of one Hermite component at local coordinate `s ∈ [0,1]` of interval `i`.
    fn hermite(&self, val: &[f64], der: &[f64], i: usize, s: f64) -> (f64, f64, f64) {
        let h = self.grid.spacing(i);
        let (p0, m0, p1, m1) = (val[i], der[i], val[i + 1], der[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * h * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * h * m1;
        let d = ((6.0 * s2 - 6.0 * s) * p0 + (-6.0 * s2 + 6.0 * s) * p1) / h
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (3.0 * s2 - 2.0 * s) * m1;
        let dd = ((12.0 * s - 6.0) * (p0 - p1)) / (h * h) + ((6.0 * s - 4.0) * m0 + (6.0 * s - 2.0) * m1) / h;
        (v, d, dd)
    }

    fn local(&self, i: usize, s: f64) -> LocalFields {
        let h = self.grid.spacing(i);
        let (_, d1, dd1) = self.hermite(&self.v1, &self.dv1, i, s);
        let (_, d2, dd2) = self.hermite(&self.v2, &self.dv2, i, s);
        let w = (1.0 - s) * self.w[i] + s * self.w[i + 1];
        let dw = (self.w[i + 1] - self.w[i]) / h;
        let dz = self.z.as_ref().map(|z| (z[i + 1] - z[i]) / h);
        LocalFields { dv: [d1, d2], ddv: [dd1, dd2], w, dw, dz }
    }
}

struct LocalFields {
    dv: [f64; 2],
    ddv: [f64; 2],
    w: f64,
    dw: f64,
    dz: Option<f64>,
}

/// `B` and `B′` sampled at interval midpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BField {
    pub midpoints: Vec<f64>,
    pub b: Vec<[f64; 3]>,
    pub db: Vec<[f64; 3]>,
}

impl BField {
    pub fn b_matrix(&self, i: usize) -> Matrix3<f64> {
        skew_from_entries(self.b[i])
    }

    pub fn db_matrix(&self, i: usize) -> Matrix3<f64> {
        skew_from_entries(self.db[i])
    }
}

/// `B₁₂ = −v₁′`, `B₁₃ = −v₂′`, `B₂₃ = −w`.
pub fn build_b(profile: &RodProfile) -> BField {
    let g = &profile.grid;
    let (mut midpoints, mut b, mut db) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..g.n_intervals() {
        let f = profile.local(i, 0.5);
        midpoints.push(0.5 * (g.nodes()[i] + g.nodes()[i + 1]));
        b.push([-f.dv[0], -f.dv[1], -f.w]);
        db.push([-f.ddv[0], -f.ddv[1], -f.dw]);
    }
    BField { midpoints, b, db }
}

/// `½ ∫ Q*(B′, s) dx₁` with the regime-dependent stretching `s`.
pub fn energy_alpha(profile: &RodProfile, regime: Regime, q: &QStarForm) -> Result<f64> {
    if regime != Regime::Open23 && profile.z.is_none() {
        return Err(Error::MissingField("z"));
    }
    let g = &profile.grid;
    let mut e = 0.0;
    for i in 0..g.n_intervals() {
        let h = g.spacing(i);
        for &(s, w) in GAUSS5_UNIT.iter() {
            let f = profile.local(i, s);
            let stretch = match regime {
                Regime::Open23 => 0.0,
                Regime::Equal3 => f.dz.unwrap() + 0.5 * (f.dv[0] * f.dv[0] + f.dv[1] * f.dv[1]),
                Regime::Above3 => f.dz.unwrap(),
            };
            let xi = AffineStrainProfile::new(-f.ddv[0], -f.ddv[1], -f.dw, stretch);
            e += w * h * q.evaluate(&xi);
        }
    }
    Ok(0.5 * e)
}

/// `½ Σᵢ Q*(Aᵢ, 0) Δᵢ`.
pub fn energy_kirchhoff(frame: &FrameField, q: &QStarForm) -> f64 {
    let g = frame.grid();
    0.5 * frame
        .a_intervals()
        .iter()
        .enumerate()
        .map(|(i, a)| q.evaluate(&AffineStrainProfile::new(a[0], a[1], a[2], 0.0)) * g.spacing(i))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceProfile {
    grid: Grid1D,
    f: Vec<[f64; 3]>,
    h: Vec<[f64; 3]>,
}

impl ForceProfile {
    /// Requires `∫₀ᴸ f = 0` (trapezoid rule) to 1e-10 relative to the load scale.
    pub fn new(grid: Grid1D, f: Vec<[f64; 3]>) -> Result<Self> {
        if f.len() != grid.n_nodes() {
            return Err(Error::InvalidInput(format!("{} force samples for {} nodes", f.len(), grid.n_nodes())));
        }
        if f.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite force value".into()));
        }
        let cols: [Vec<f64>; 3] = std::array::from_fn(|c| grid.cumulative(&f.iter().map(|v| v[c]).collect::<Vec<_>>()));
        let h: Vec<[f64; 3]> = (0..grid.n_nodes()).map(|i| [cols[0][i], cols[1][i], cols[2][i]]).collect();
        let total = h.last().unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = grid.length() * f.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if total > 1e-10 * scale.max(1.0) {
            return Err(Error::ForceNotBalanced(total));
        }
        Ok(Self { grid, f, h })
    }

    pub fn zero(grid: Grid1D) -> Self {
        let n = grid.n_nodes();
        Self { grid, f: vec![[0.0; 3]; n], h: vec![[0.0; 3]; n] }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> [f64; 3]) -> Result<Self> {
        let vals = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, vals)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn f(&self) -> &[[f64; 3]] {
        &self.f
    }

    pub fn h(&self) -> &[[f64; 3]] {
        &self.h
    }

    pub fn h_vec(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.h[i])
    }

    pub fn is_zero(&self) -> bool {
        self.f.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn max_abs_h(&self) -> f64 {
        self.h.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `f ↦ Q₀ f`.
    pub fn rotated(&self, q0: &UnitQuaternion<f64>) -> Self {
        let rot = |v: &[f64; 3]| {
            let r = q0 * Vector3::from(*v);
            [r[0], r[1], r[2]]
        };
        Self { grid: self.grid.clone(), f: self.f.iter().map(rot).collect(), h: self.h.iter().map(rot).collect() }
    }
}

fn same_grid(a: &Grid1D, b: &Grid1D) -> Result<()> {
    if a.n_nodes() != b.n_nodes() || a.nodes().iter().zip(b.nodes()).any(|(x, y)| (x - y).abs() > 1e-12 * a.length()) {
        return Err(Error::InvalidInput("frame and force live on different grids".into()));
    }
    Ok(())
}

/// `J⁽²⁾ = I⁽²⁾ + ∫ h·Re₁`.
pub fn potential_j2(frame: &FrameField, force: &ForceProfile, q: &QStarForm) -> Result<f64> {
    same_grid(frame.grid(), force.grid())?;
    let load: f64 = frame
        .grid()
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * force.h_vec(i).dot(&(frame.rotations()[i] * Vector3::x())))
        .sum();
    Ok(energy_kirchhoff(frame, q) + load)
}

/// First moments `M̂ = ∫x₂M`, `M̌ = ∫x₃M` of the cross-section stress, per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressMoments {
    pub grid: Grid1D,
    pub mhat: Vec<Matrix3<f64>>,
    pub mcheck: Vec<Matrix3<f64>>,
}

/// Moments of the unit profiles F₁₂, F₁₃, F₂₃ (index order of A's entries).
pub type MomentBasis = [(Matrix3<f64>, Matrix3<f64>); 3];

impl StressMoments {
    /// Superposes per-node moments from the unit-profile moments.
    pub fn from_basis(frame: &FrameField, basis: &MomentBasis) -> Self {
        let a = frame.a_nodal();
        let (mut mhat, mut mcheck) = (Vec::with_capacity(a.len()), Vec::with_capacity(a.len()));
        for ai in &a {
            let (mut h, mut c) = (Matrix3::zeros(), Matrix3::zeros());
            for k in 0..3 {
                h += basis[k].0 * ai[k];
                c += basis[k].1 * ai[k];
            }
            mhat.push(h);
            mcheck.push(c);
        }
        Self { grid: frame.grid().clone(), mhat, mcheck }
    }

    /// Moment combinations entering the equilibrium equations:
    /// `(M̂₁₁ − M̂₂₂, M̌₁₁ − M̌₃₃, M̌₂₁ − M̂₃₁)` per node.
    pub fn combinations(&self) -> Vec<[f64; 3]> {
        self.mhat
            .iter()
            .zip(&self.mcheck)
            .map(|(h, c)| [h[(0, 0)] - h[(1, 1)], c[(0, 0)] - c[(2, 2)], c[(1, 0)] - h[(2, 0)]])
            .collect()
    }
}

/// Moments of the unit profiles computed from constrained cell solves.
pub fn moment_basis(problem: &CellProblem, opts: &FemOptions) -> Result<MomentBasis> {
    let units = [
        AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0),
        AffineStrainProfile::new(0.0, 1.0, 0.0, 0.0),
        AffineStrainProfile::new(0.0, 0.0, 1.0, 0.0),
    ];
    let m: Vec<(Matrix3<f64>, Matrix3<f64>)> = units
        .par_iter()
        .map(|xi| problem.solve_constrained(xi, opts).map(|s| problem.stress_moments(&s)))
        .collect::<Result<_>>()?;
    Ok([m[0], m[1], m[2]])
}

/// Closed-form moments for the isotropic unit-area disk.
pub fn isotropic_disk_moment_basis(mu: f64) -> MomentBasis {
    let c = mu / (4.0 * std::f64::consts::PI);
    let z = Matrix3::zeros();
    [
        (Matrix3::new(2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0) * c, z),
        (z, Matrix3::new(2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0) * c),
        (
            Matrix3::new(0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0) * c,
            Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0) * c,
        ),
    ]
}

/// Stress moments per node, by linearity from the three unit-profile cell solutions.
pub fn stress_moments(frame: &FrameField, problem: &CellProblem, opts: &FemOptions) -> Result<StressMoments> {
    Ok(StressMoments::from_basis(frame, &moment_basis(problem, opts)?))
}

/// The same combinations obtained from the reduced form, `∂_A ½Q*(A, 0)`.
pub fn combinations_from_qstar(frame: &FrameField, q: &QStarForm) -> Vec<[f64; 3]> {
    let k = q.bending_block();
    frame
        .a_nodal()
        .iter()
        .map(|a| {
            let c = k * Vector3::from(*a);
            [c[0], c[1], c[2]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RodResidualReport {
    /// Max-norm of each equation over the grid.
    pub equations_max: [f64; 3],
    /// Discrete L² norm of each equation.
    pub equations_l2: [f64; 3],
    /// The three combinations at x₁ = 0, then at x₁ = L.
    pub boundary: [f64; 6],
    /// Pointwise residual of each equation.
    pub pointwise: Vec<[f64; 3]>,
}

impl RodResidualReport {
    pub fn max(&self) -> f64 {
        self.equations_max.iter().chain(self.boundary.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Residuals of the equilibrium equations and natural boundary conditions.
pub fn el_residual_rod(frame: &FrameField, force: &ForceProfile, sm: &StressMoments) -> Result<RodResidualReport> {
    if sm.mhat.len() != frame.grid().n_nodes() {
        return Err(Error::InvalidInput("stress moments do not match the frame grid".into()));
    }
    el_residual_from_combinations(frame, force, &sm.combinations())
}

/// As [`el_residual_rod`], from per-node moment combinations.
pub fn el_residual_from_combinations(
    frame: &FrameField,
    force: &ForceProfile,
    comb: &[[f64; 3]],
) -> Result<RodResidualReport> {
    same_grid(frame.grid(), force.grid())?;
    let g = frame.grid();
    let n = g.n_nodes();
    let a = frame.a_nodal();
    let d: [Vec<f64>; 3] = std::array::from_fn(|k| g.differentiate(&comb.iter().map(|c| c[k]).collect::<Vec<_>>()));
    let pointwise: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let r = frame.matrix(i);
            let h = force.h_vec(i);
            let (hd1, hd2) = (h.dot(&r.column(1)), h.dot(&r.column(2)));
            let [a12, a13, a23] = a[i];
            let [c1, c2, c3] = comb[i];
            [
                d[0][i] - a13 * c3 + a23 * c2 + hd1,
                d[1][i] + a12 * c3 - a23 * c1 + hd2,
                d[2][i] - a12 * c2 + a13 * c1,
            ]
        })
        .collect();
    let w = g.weights();
    let mut equations_max = [0.0; 3];
    let mut equations_l2 = [0.0; 3];
    for (p, wi) in pointwise.iter().zip(&w) {
        for k in 0..3 {
            equations_max[k] = f64::max(equations_max[k], p[k].abs());
            equations_l2[k] += wi * p[k] * p[k];
        }
    }
    equations_l2.iter_mut().for_each(|v| *v = v.sqrt());
    let (c0, cl) = (comb[0], comb[n - 1]);
    Ok(RodResidualReport {
        equations_max,
        equations_l2,
        boundary: [c0[0], c0[1], c0[2], cl[0], cl[1], cl[2]],
        pointwise,
    })
}
