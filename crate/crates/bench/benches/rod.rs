use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rodlim_bench::cos_load;
use rodlim_core::equilibrium::{isotropic_disk_qstar, minimize_j2, solve_isotropic_disk};
use rodlim_core::rod::{energy_kirchhoff, potential_j2};
use rodlim_core::{EquilibriumOptions, FrameField, Grid1D, Init};
use nalgebra::UnitQuaternion;

fn energies(c: &mut Criterion) {
    let q = isotropic_disk_qstar(1.0);
    let g = Grid1D::uniform(1.0, 400).unwrap();
    let a: Vec<[f64; 3]> = (0..400).map(|i| [0.3, 0.1 * (i as f64 / 400.0), 0.2]).collect();
    let f = FrameField::from_intervals(g, UnitQuaternion::identity(), &a).unwrap();
    let load = cos_load(1.0, 400, 1e-3);
    c.bench_function("kirchhoff_energy_400", |b| b.iter(|| energy_kirchhoff(black_box(&f), &q)));
    c.bench_function("potential_j2_400", |b| b.iter(|| potential_j2(black_box(&f), &load, &q).unwrap()));
}

fn equilibria(c: &mut Criterion) {
    let q = isotropic_disk_qstar(1.0);
    let opts = EquilibriumOptions::default();
    let mut g = c.benchmark_group("equilibrium");
    g.sample_size(10);
    for n in [100, 200] {
        let load = cos_load(1.0, n, 1e-3);
        let grid = load.grid().clone();
        g.bench_with_input(BenchmarkId::new("minimize", n), &n, |b, _| {
            b.iter(|| minimize_j2(&load, &q, &grid, Init::Straight, &opts).unwrap().energy)
        });
        g.bench_with_input(BenchmarkId::new("shooting", n), &n, |b, _| {
            b.iter(|| solve_isotropic_disk(&load, 1.0, &grid, &opts).unwrap().energy)
        });
    }
    g.finish();
}

criterion_group!(benches, energies, equilibria);
criterion_main!(benches);
