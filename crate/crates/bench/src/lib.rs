//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use rodlim_core::{CellProblem, CrossSection, ElasticTensor, ForceProfile, Grid1D};

pub fn disk_problem(refinement: usize) -> CellProblem {
    let cs = CrossSection::generate_disk(refinement).expect("disk mesh");
    CellProblem::new(&cs, &ElasticTensor::isotropic(1.0, 1.0).expect("isotropic")).expect("cell problem")
}

/// Transverse load `δ cos(2πx/L) e₂`, balanced on [0, L].
pub fn cos_load(length: f64, intervals: usize, delta: f64) -> ForceProfile {
    let g = Grid1D::uniform(length, intervals).expect("grid");
    ForceProfile::from_fn(g, |x| [0.0, delta * (2.0 * PI * x / length).cos(), 0.0]).expect("balanced load")
}
