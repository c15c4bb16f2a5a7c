//! Reduced densities and limit energies for thin incompressible elastic rods.
//!
//! The cross-section stage ([`cell`], [`torsion`]) turns a normalized section
//! and an elasticity tensor into the 4×4 form [`QStarForm`]; the rod stage
//! ([`rod`], [`equilibrium`]) consumes that form only.

pub mod cell;
pub mod equilibrium;
pub mod error;
pub mod fem;
pub mod gamma;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod mesh_io;
pub mod quadrature;
pub mod rod;
pub mod torsion;

pub use cell::{AffineStrainProfile, CellProblem, CellSolution, FemOptions, Gauge, Mode, QStarForm, QStarSource};
pub use equilibrium::{EquilibriumOptions, EquilibriumResult, Init};
pub use error::{Error, Result};
pub use material::ElasticTensor;
pub use mesh::{CrossSection, NormalizationTransform};
pub use rod::{FrameField, ForceProfile, Grid1D, Regime, RodProfile, StressMoments};
pub use torsion::TorsionSolution;
