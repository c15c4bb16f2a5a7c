//! Saint-Venant torsion function and the isotropic closed-form Q*.

use serde::Serialize;

use crate::cell::{QStarForm, QStarSource};
use crate::error::{Error, Result};
use crate::fem::{bary_gradients, p2_gradients, p2_values, P2Space};
use crate::linalg::{norm_inf, Csr, Factorization};
use crate::mesh::CrossSection;
use crate::quadrature::{GAUSS3_UNIT, TRI_ORDER4};

#[derive(Debug, Clone, Serialize)]
pub struct TorsionSolution {
    /// Values at the P2 nodes, zero mean.
    pub phi: Vec<f64>,
    pub tau: f64,
    /// ∞-norm of the discrete Neumann residual.
    pub neumann_residual: f64,
    /// `∫ x̃⊥·∇̃φ`
    pub correction: f64,
    /// `∫ |∇̃φ|²`
    pub dirichlet_energy: f64,
    pub phi_l2: f64,
    pub phi_mean: f64,
    /// P2 node coordinates matching `phi`.
    pub nodes: Vec<[f64; 2]>,
}

/// Solves `Δ̃φ = 0` in ω with `∇̃φ·ν = x̃⊥·ν` on ∂ω, `x̃⊥ = (−x₃, x₂)`,
/// and returns `τ = ∫|x̃|² − ∫x̃⊥·∇̃φ`.
pub fn solve_torsion(cs: &CrossSection) -> Result<TorsionSolution> {
    let space = P2Space::new(cs);
    let n = space.n_dofs();
    let mut trip = Vec::with_capacity(36 * cs.triangles().len() + 2 * n);
    let mut mean_row = vec![0.0; n];
    for t in 0..cs.triangles().len() {
        let g = bary_gradients(cs, t);
        let dofs = space.element_dofs(t);
        let mut k = [[0.0; 6]; 6];
        for ((_, w), qp) in cs.quadrature_points(t).zip(TRI_ORDER4.iter()) {
            let dn = p2_gradients(qp.bary, &g);
            let nv = p2_values(qp.bary);
            for a in 0..6 {
                mean_row[dofs[a]] += w * nv[a];
                for b in 0..6 {
                    k[a][b] += w * (dn[a][0] * dn[b][0] + dn[a][1] * dn[b][1]);
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                trip.push((dofs[a], dofs[b], k[a][b]));
            }
        }
    }
    let stiffness = Csr::from_triplets(n, n, &trip);

    let mut rhs = vec![0.0; n + 1];
    let v = cs.vertices();
    for e in cs.boundary_edges() {
        let [a, b] = e.vertices;
        let m = space
            .edge_node(a, b)
            .ok_or_else(|| Error::DegenerateMesh(format!("boundary edge ({a}, {b}) has no midpoint node")))?;
        for &(s, w) in GAUSS3_UNIT.iter() {
            let x = [(1.0 - s) * v[a][0] + s * v[b][0], (1.0 - s) * v[a][1] + s * v[b][1]];
            let data = -x[1] * e.normal[0] + x[0] * e.normal[1];
            let shape = [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)];
            for (node, sh) in [a, b, m].into_iter().zip(shape) {
                rhs[node] += w * e.length * data * sh;
            }
        }
    }

    let scale = 1.0 / norm_inf(&mean_row);
    for (i, &c) in mean_row.iter().enumerate() {
        trip.push((i, n, scale * c));
        trip.push((n, i, scale * c));
    }
    let fact = Factorization::new(Csr::from_triplets(n + 1, n + 1, &trip))?;
    let (x, _) = fact.solve(&rhs, 1e-13)?;
    let phi = x[..n].to_vec();

    let kphi = stiffness.mul_vec(&phi);
    let neumann_residual = kphi.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if neumann_residual > 1e-8 * (1.0 + norm_inf(&rhs[..n])) {
        return Err(Error::SolverFailure(format!(
            "Neumann residual {neumann_residual:.3e}: singular beyond the constant kernel (disconnected mesh?)"
        )));
    }

    let (mut correction, mut dirichlet_energy, mut phi_sq, mut phi_int) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..cs.triangles().len() {
        let g = bary_gradients(cs, t);
        let dofs = space.element_dofs(t);
        for ((p, w), qp) in cs.quadrature_points(t).zip(TRI_ORDER4.iter()) {
            let dn = p2_gradients(qp.bary, &g);
            let nv = p2_values(qp.bary);
            let (mut val, mut grad) = (0.0, [0.0; 2]);
            for a in 0..6 {
                val += nv[a] * phi[dofs[a]];
                grad[0] += dn[a][0] * phi[dofs[a]];
                grad[1] += dn[a][1] * phi[dofs[a]];
            }
            correction += w * (-p[1] * grad[0] + p[0] * grad[1]);
            dirichlet_energy += w * (grad[0] * grad[0] + grad[1] * grad[1]);
            phi_sq += w * val * val;
            phi_int += w * val;
        }
    }
    let polar = cs.m2() + cs.m3();
    let tau = polar - correction;
    Ok(TorsionSolution {
        phi,
        tau,
        neumann_residual,
        correction,
        dirichlet_energy,
        phi_l2: phi_sq.sqrt(),
        phi_mean: phi_int,
        nodes: space.nodes().to_vec(),
    })
}

/// `Q*(F, t) = 3μ(F₁₂² m₂ + F₁₃² m₃ + t²) + μτF₂₃²` for isotropic materials.
pub fn qstar_isotropic(cs: &CrossSection, mu: f64, tau: f64) -> Result<QStarForm> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("shear modulus must be positive, got {mu}")));
    }
    Ok(QStarForm::diagonal(
        [3.0 * mu * cs.m2(), 3.0 * mu * cs.m3(), mu * tau, 3.0 * mu],
        QStarSource::IsotropicClosedForm,
    ))
}

/// Saint-Venant series for the torsion constant of the unit square.
pub fn square_torsion_series(terms: usize) -> f64 {
    use std::f64::consts::PI;
    let s: f64 = (0..terms)
        .map(|i| {
            let n = (2 * i + 1) as f64;
            (n * PI / 2.0).tanh() / n.powi(5)
        })
        .sum();
    (1.0 - 192.0 / PI.powi(5) * s) / 3.0
}
