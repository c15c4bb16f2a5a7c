//! Quadratic form of linearized elasticity, `Q(F) = L F : F`.
//!
//! The fourth-order tensor is stored as a symmetric 6×6 matrix in the
//! orthonormal Mandel basis of symmetric 3×3 matrices, component order
//! (11, 22, 33, 23, 13, 12) with off-diagonal components scaled by √2.
//! Skew parts are projected out before the tensor is applied, so
//! `Q(F) = Q(F^sym)` holds by construction.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::Serialize;

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Provenance {
    Isotropic { lambda: f64, mu: f64 },
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticTensor {
    sym_matrix: Matrix6<f64>,
    provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Smallest eigenvalue of the Mandel matrix, the coercivity constant on
    /// symmetric matrices.
    pub min_eigenvalue: f64,
    pub symmetry_defect: f64,
    pub annihilates_skew: bool,
    pub coercive: bool,
}

/// Mandel coordinates of the symmetric part of `f`.
pub fn mandel(f: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        f[(0, 0)],
        f[(1, 1)],
        f[(2, 2)],
        (f[(1, 2)] + f[(2, 1)]) / SQRT2,
        (f[(0, 2)] + f[(2, 0)]) / SQRT2,
        (f[(0, 1)] + f[(1, 0)]) / SQRT2,
    )
}

pub fn from_mandel(v: &Vector6<f64>) -> Matrix3<f64> {
    let (a, b, c) = (v[3] / SQRT2, v[4] / SQRT2, v[5] / SQRT2);
    Matrix3::new(v[0], c, b, c, v[1], a, b, a, v[2])
}

impl ElasticTensor {
    /// `Q(F) = 2μ|F^sym|² + λ(tr F)²`; fails unless μ > 0 and 3λ + 2μ > 0.
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        let t = Self::isotropic_unchecked(lambda, mu);
        t.require_coercive()?;
        Ok(t)
    }

    /// Isotropic tensor without the coercivity check.
    pub fn isotropic_unchecked(lambda: f64, mu: f64) -> Self {
        let mut m = Matrix6::identity() * (2.0 * mu);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += lambda;
            }
        }
        Self { sym_matrix: m, provenance: Provenance::Isotropic { lambda, mu } }
    }

    /// General tensor from its Mandel matrix. The matrix is symmetrized;
    /// an asymmetry above 1e-10 (relative) is rejected.
    pub fn general(matrix: Matrix6<f64>) -> Result<Self> {
        let t = Self::general_unchecked(matrix)?;
        t.require_coercive()?;
        Ok(t)
    }

    pub fn general_unchecked(matrix: Matrix6<f64>) -> Result<Self> {
        let scale = matrix.abs().max().max(f64::MIN_POSITIVE);
        let defect = (matrix - matrix.transpose()).abs().max();
        if defect > 1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "elasticity matrix is not symmetric (defect {defect:.3e})"
            )));
        }
        let sym = 0.5 * (matrix + matrix.transpose());
        Ok(Self { sym_matrix: sym, provenance: Provenance::General })
    }

    /// Row-major 36 entries in the Mandel basis.
    pub fn from_row_major(entries: &[f64]) -> Result<Self> {
        if entries.len() != 36 {
            return Err(Error::InvalidInput(format!("expected 36 entries, got {}", entries.len())));
        }
        Self::general(Matrix6::from_row_slice(entries))
    }

    pub fn sym_matrix(&self) -> &Matrix6<f64> {
        &self.sym_matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.provenance, Provenance::Isotropic { .. })
    }

    /// `L F` (a symmetric matrix).
    pub fn apply(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        from_mandel(&(self.sym_matrix * mandel(f)))
    }

    /// `Q(F) = L F^sym : F^sym`.
    pub fn evaluate_q(&self, f: &Matrix3<f64>) -> f64 {
        let m = mandel(f);
        m.dot(&(self.sym_matrix * m))
    }

    /// Bilinear form `L F : G`.
    pub fn contract(&self, f: &Matrix3<f64>, g: &Matrix3<f64>) -> f64 {
        mandel(g).dot(&(self.sym_matrix * mandel(f)))
    }

    pub fn validate(&self) -> ValidationReport {
        let eig = SymmetricEigen::new(self.sym_matrix);
        let min_eigenvalue = eig.eigenvalues.min();
        let scale = self.sym_matrix.abs().max();
        let symmetry_defect = (self.sym_matrix - self.sym_matrix.transpose()).abs().max();
        let skew = Matrix3::new(0.0, 1.0, -0.5, -1.0, 0.0, 2.0, 0.5, -2.0, 0.0);
        let annihilates_skew = self.evaluate_q(&skew).abs() <= 1e-14 * scale.max(1.0);
        ValidationReport {
            min_eigenvalue,
            symmetry_defect,
            annihilates_skew,
            coercive: min_eigenvalue > 1e-12 * scale && scale > 0.0,
        }
    }

    fn require_coercive(&self) -> Result<()> {
        let report = self.validate();
        if report.coercive {
            Ok(())
        } else {
            Err(Error::NotCoercive { min_eigenvalue: report.min_eigenvalue })
        }
    }
}
