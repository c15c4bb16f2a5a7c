//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix6, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rodlim_core::cell::{reduce_qstar, splitting_alpha, LinearSolver};
use rodlim_core::equilibrium::{a_field_distance, minimize_j2, solve_isotropic_disk};
use rodlim_core::gamma::gamma_check;
use rodlim_core::rod::{energy_alpha, energy_kirchhoff};
use rodlim_core::torsion::{qstar_isotropic, solve_torsion, square_torsion_series};
use rodlim_core::{
    AffineStrainProfile, CellProblem, CrossSection, ElasticTensor, EquilibriumOptions, FemOptions, ForceProfile,
    FrameField, Gauge, Grid1D, Init, Mode, QStarForm, Regime, RodProfile,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn disk_target() -> [f64; 4] {
    [3.0 / (4.0 * PI), 3.0 / (4.0 * PI), 1.0 / (2.0 * PI), 3.0]
}

fn qstar(cs: &CrossSection, l: &ElasticTensor) -> Result<QStarForm, String> {
    let p = CellProblem::new(cs, l).map_err(|e| e.to_string())?;
    reduce_qstar(&p, Mode::Constrained, &FemOptions::default()).map_err(|e| e.to_string())
}

fn max_diag_error(q: &QStarForm) -> f64 {
    let t = disk_target();
    let diag = (0..4).map(|i| rel(q.matrix[i][i], t[i])).fold(0.0, f64::max);
    let scale = t.iter().cloned().fold(0.0, f64::max);
    let mut off: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                off = off.max(q.matrix[i][j].abs() / scale);
            }
        }
    }
    diag.max(off)
}

const DISK_LEVELS: [usize; 3] = [2, 3, 4];

fn criterion_1() -> Outcome {
    let l = ElasticTensor::isotropic(1.0, 1.0).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();
    for r in DISK_LEVELS {
        errs.push(max_diag_error(&qstar(&CrossSection::generate_disk(r).unwrap(), &l)?));
    }
    check(*errs.last().unwrap() <= 1e-2, format!("finest error {:.3e} > 1%", errs.last().unwrap()))?;
    check(errs.windows(2).all(|w| w[1] < w[0]), format!("errors not decreasing: {}", list(&errs)))?;
    Ok(format!("max relative entry error by level {}", list(&errs)))
}

fn criterion_2() -> Outcome {
    let cs = CrossSection::generate_disk(*DISK_LEVELS.last().unwrap()).unwrap();
    let forms: Vec<QStarForm> = [0.0, 1.0, 10.0]
        .iter()
        .map(|&lam| qstar(&cs, &ElasticTensor::isotropic(lam, 1.0).unwrap()))
        .collect::<Result<_, _>>()?;
    let mut worst: f64 = 0.0;
    for f in &forms[1..] {
        for i in 0..4 {
            worst = worst.max(rel(f.matrix[i][i], forms[0].matrix[i][i]));
        }
    }
    check(worst <= 2e-3, format!("diagonal varies by {worst:.3e} across λ"))?;
    for f in &forms {
        check(max_diag_error(f) <= 1e-2, "entry off the closed form by more than 1%")?;
    }
    Ok(format!("max relative change over λ ∈ {{0, 1, 10}}: {worst:.3e}"))
}

fn criterion_3() -> Outcome {
    let cs = CrossSection::generate_disk(3).unwrap();
    let p = CellProblem::new(&cs, &ElasticTensor::isotropic(1.0, 1.0).unwrap()).map_err(|e| e.to_string())?;
    let xi = AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0);
    let ks = [1.0, 10.0, 100.0, 1000.0];
    let t = gamma_check(&p, &xi, &ks, &FemOptions::default()).map_err(|e| e.to_string())?;
    let (lam, mu) = (1.0, 1.0);
    let mut worst: f64 = 0.0;
    for row in &t.rows {
        let k = row.k;
        let exact = mu * (3.0 * lam + 3.0 * k + 2.0 * mu) / (lam + k + mu) / (4.0 * PI);
        worst = worst.max(rel(row.value, exact));
    }
    check(worst <= 1e-2, format!("penalized value off by {worst:.3e}"))?;
    check(t.rows.windows(2).all(|w| w[1].value >= w[0].value - 1e-10), "not monotone in k")?;
    let ext = rel(t.extrapolated, t.constrained);
    check(ext <= 1e-3, format!("extrapolation off by {ext:.3e}"))?;
    Ok(format!("max formula error {worst:.3e}, extrapolation error {ext:.3e}, k·gap ≤ {:.3e}", t.rate_constant))
}

fn criterion_4() -> Outcome {
    let disk = solve_torsion(&CrossSection::generate_disk(4).unwrap()).map_err(|e| e.to_string())?;
    let e_disk = rel(disk.tau, 1.0 / (2.0 * PI));
    check(e_disk <= 5e-3, format!("disk τ error {e_disk:.3e}"))?;
    check(disk.phi_l2 <= 1e-3, format!("disk ‖φ‖ = {:.3e}", disk.phi_l2))?;
    let oracle = square_torsion_series(10);
    let sq = solve_torsion(&CrossSection::generate_rectangle(1.0, 4).unwrap()).map_err(|e| e.to_string())?;
    let e_sq = rel(sq.tau, oracle);
    check(e_sq <= 1e-2, format!("square τ error {e_sq:.3e}"))?;
    Ok(format!("disk τ error {e_disk:.3e}, ‖φ‖ {:.3e}; square τ {:.6} vs {oracle:.6} ({e_sq:.3e})", disk.phi_l2, sq.tau))
}

fn criterion_5() -> Outcome {
    let cs = CrossSection::generate_disk(4).unwrap();
    let p = CellProblem::new(&cs, &ElasticTensor::isotropic(1.0, 1.0).unwrap()).map_err(|e| e.to_string())?;
    let sol = p
        .solve_constrained(&AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0), &FemOptions::default())
        .map_err(|e| e.to_string())?;
    let (err, norm) = p.l2_error(&sol.beta, |x| [0.0, -0.25 * (x[0] * x[0] - x[1] * x[1]), -0.5 * x[0] * x[1]]);
    check(err / norm <= 1e-2, format!("β relative L² error {:.3e}", err / norm))?;
    let (mhat, mcheck) = p.stress_moments(&sol);
    let c = 1.0 / (4.0 * PI);
    let exact_hat = Matrix3::new(2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0) * c;
    let scale = 2.0 * c;
    let dev = ((mhat - exact_hat).abs().max()).max(mcheck.abs().max()) / scale;
    check(dev <= 1e-2, format!("moment deviation {dev:.3e}"))?;
    Ok(format!("β error {:.3e}, moment deviation {dev:.3e}", err / norm))
}

fn random_tensor(rng: &mut ChaCha8Rng) -> ElasticTensor {
    let b = Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    ElasticTensor::general(b.transpose() * b + Matrix6::identity() * 0.5).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let tensors: Vec<ElasticTensor> = (0..5).map(|_| random_tensor(&mut rng)).collect();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_alpha: f64 = 0.0;
    for (shape, meshes) in [
        ("disk", [1, 2, 3].map(|r| CrossSection::generate_disk(r).unwrap())),
        ("square", [1, 2, 3].map(|r| CrossSection::generate_rectangle(1.0, r).unwrap())),
    ] {
        for (n, l) in tensors.iter().enumerate() {
            let alpha = splitting_alpha(l).map_err(|e| e.to_string())?;
            let mut ratios = Vec::new();
            for cs in &meshes {
                let q = qstar(cs, l)?;
                ratios.push(q.cross_block() / q.frobenius_norm());
                worst_alpha = worst_alpha.max(rel(q.matrix[3][3], alpha));
            }
            let last = *ratios.last().unwrap();
            check(last <= 1e-3, format!("{shape} tensor {n}: cross block ratio {last:.3e}"))?;
            // at roundoff the block is already exact and cannot decrease further
            let decreasing = ratios.windows(2).all(|w| w[1] < w[0] || w[1] <= 1e-10);
            check(decreasing, format!("{shape} tensor {n}: cross block not decreasing {}", list(&ratios)))?;
            worst_ratio = worst_ratio.max(last);
        }
    }
    check(worst_alpha <= 1e-8, format!("splitting α vs (4,4) entry: {worst_alpha:.3e}"))?;
    let iso = (splitting_alpha(&ElasticTensor::isotropic(0.7, 1.3).unwrap()).unwrap() - 3.0 * 1.3).abs();
    check(iso <= 1e-10, format!("isotropic α error {iso:.3e}"))?;
    Ok(format!("cross block / norm ≤ {worst_ratio:.3e}; α vs Q*₄₄ ≤ {worst_alpha:.3e}; isotropic α error {iso:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = random_tensor(&mut rng);
    let cs = CrossSection::generate_disk(2).unwrap();
    let p = CellProblem::new(&cs, &l).map_err(|e| e.to_string())?;
    let opts = FemOptions::default();
    let solve = |xi: &AffineStrainProfile| p.solve_constrained(xi, &opts).map_err(|e| e.to_string());

    // linearity within one gauge case
    let (a, b) = (AffineStrainProfile::new(0.3, -1.2, 0.7, 0.5), AffineStrainProfile::new(-0.4, 0.2, 1.1, 0.8));
    let (sa, sb, sab) = (solve(&a)?, solve(&b)?, solve(&(a + b))?);
    let scale = sab.beta.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut lin: f64 = 0.0;
    for i in 0..sab.beta.len() {
        for c in 0..3 {
            lin = lin.max((sab.beta[i][c] - sa.beta[i][c] - sb.beta[i][c]).abs() / scale);
        }
    }
    let lscale = sab.lambda.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..sab.lambda.len() {
        lin = lin.max((sab.lambda[i] - sa.lambda[i] - sb.lambda[i]).abs() / lscale);
    }
    check(lin <= 1e-8, format!("linearity defect {lin:.3e}"))?;

    // multiplier moment identities for H = F₁₂, F₁₃, F₂₃ and a mixture
    let mut ident: f64 = 0.0;
    for xi in [
        AffineStrainProfile::new(1.0, 0.0, 0.0, 0.0),
        AffineStrainProfile::new(0.0, 1.0, 0.0, 0.0),
        AffineStrainProfile::new(0.0, 0.0, 1.0, 0.0),
        AffineStrainProfile::new(0.4, -0.3, 0.9, 0.0),
    ] {
        let s = solve(&xi)?;
        let (lh, lc) = p.multiplier_moments(&s);
        let (mh, mc) = p.stress_moments(&s);
        let sc = mh.abs().max().max(mc.abs().max());
        ident = ident.max((lh + 2.0 * mh[(1, 1)]).abs() / sc).max((lc + 2.0 * mc[(2, 2)]).abs() / sc);
    }
    check(ident <= 1e-6, format!("multiplier identity defect {ident:.3e}"))?;

    // uniqueness: MINRES from two different starts against the direct solve
    let xi = AffineStrainProfile::new(0.6, 0.1, -0.5, 0.0);
    let direct = solve(&xi)?;
    let n = 3 * direct.beta.len() + direct.lambda.len() + 8;
    let mut uniq: f64 = 0.0;
    for seed in [1u64, 2] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let start: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let o = FemOptions {
            solver: LinearSolver::Minres { initial: Some(start), max_iter: 200_000 },
            tol: 1e-10,
            ..FemOptions::default()
        };
        let s = p.solve_constrained(&xi, &o).map_err(|e| e.to_string())?;
        let bscale = direct.beta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in s.beta.iter().flatten().zip(direct.beta.iter().flatten()) {
            uniq = uniq.max((x - y).abs() / bscale);
        }
    }
    check(uniq <= 1e-9, format!("re-initialized solutions differ by {uniq:.3e}"))?;

    // gauge choice does not change the minimum value
    let xi = AffineStrainProfile::new(0.8, -0.3, 0.6, 0.0);
    let e_mg = solve(&xi)?.energy;
    let e_rm = p
        .solve_constrained(&xi, &FemOptions { gauge: Some(Gauge::RotationMoment), ..FemOptions::default() })
        .map_err(|e| e.to_string())?
        .energy;
    let gauge = rel(e_rm, e_mg);
    check(gauge <= 1e-8, format!("gauge energies differ by {gauge:.3e}"))?;
    Ok(format!("linearity {lin:.1e}, multiplier identities {ident:.1e}, uniqueness {uniq:.1e}, gauge {gauge:.1e}"))
}

fn cos_load(g: &Grid1D, delta: f64) -> ForceProfile {
    let l = g.length();
    ForceProfile::from_fn(g.clone(), |x| [0.0, delta * (2.0 * PI * x / l).cos(), 0.0]).unwrap()
}

fn criterion_8() -> Outcome {
    let cs = CrossSection::generate_disk(4).unwrap();
    let tau = solve_torsion(&cs).map_err(|e| e.to_string())?.tau;
    let q = qstar_isotropic(&cs, 1.0, tau).map_err(|e| e.to_string())?;
    let opts = EquilibriumOptions::default();
    let g = Grid1D::uniform(1.0, 200).unwrap();
    let free = minimize_j2(&ForceProfile::zero(g.clone()), &q, &g, Init::Straight, &opts).map_err(|e| e.to_string())?;
    check(free.energy.abs() <= 1e-12 && free.el_residual <= 1e-10, "unloaded rod is not straight")?;

    let force = cos_load(&g, 1e-3);
    let m = minimize_j2(&force, &q, &g, Init::Straight, &opts).map_err(|e| e.to_string())?;
    let s = solve_isotropic_disk(&force, 1.0, &g, &opts).map_err(|e| e.to_string())?;
    check(m.converged && s.converged, "a solver did not converge")?;
    let dist = a_field_distance(&m.frame, &s.frame);
    check(dist <= 5e-3, format!("A fields differ by {dist:.3e}"))?;
    check(m.el_residual <= 1e-4 && s.el_residual <= 1e-4, "equilibrium residual above 1e-4")?;

    let g2 = Grid1D::uniform(1.0, 400).unwrap();
    let m2 = minimize_j2(&cos_load(&g2, 1e-3), &q, &g2, Init::Straight, &opts).map_err(|e| e.to_string())?;
    let ratio = m.el_residual / m2.el_residual;
    check(ratio >= 2.0, format!("refinement reduced the residual only by {ratio:.2}"))?;
    Ok(format!(
        "A distance {dist:.3e}; residuals minimize {:.2e}, shooting {:.2e}; refinement ratio {ratio:.2}",
        m.el_residual, s.el_residual
    ))
}

fn criterion_9() -> Outcome {
    let cs = CrossSection::generate_disk(4).unwrap();
    let tau = solve_torsion(&cs).map_err(|e| e.to_string())?.tau;
    let q = qstar_isotropic(&cs, 1.0, tau).map_err(|e| e.to_string())?;
    let (l, n) = (2.0, 200);
    let g = Grid1D::uniform(l, n).unwrap();
    let mut worst: f64 = 0.0;
    let c = 0.4;
    let stretch = RodProfile::from_fns(g.clone(), |_| [0.0; 4], |_| 0.0, Some(&|x| c * x)).unwrap();
    let e = energy_alpha(&stretch, Regime::Above3, &q).map_err(|e| e.to_string())?;
    worst = worst.max(rel(e, 0.5 * l * 3.0 * c * c));
    let s0 = 0.3;
    let cancel = RodProfile::from_fns(g.clone(), |x| [s0 * x, s0, 0.0, 0.0], |_| 0.0, Some(&|x| -0.5 * s0 * s0 * x)).unwrap();
    let e0 = energy_alpha(&cancel, Regime::Equal3, &q).map_err(|e| e.to_string())?;
    check(e0.abs() <= 1e-12, format!("cancelling profile has energy {e0:.3e}"))?;
    let bend = RodProfile::from_fns(g.clone(), |x| [0.5 * x * x, x, 0.0, 0.0], |_| 0.0, None).unwrap();
    let e = energy_alpha(&bend, Regime::Open23, &q).map_err(|e| e.to_string())?;
    worst = worst.max(rel(e, 0.5 * l * 3.0 / (4.0 * PI)));
    let kappa = 0.8;
    let arc = FrameField::from_intervals(g.clone(), UnitQuaternion::identity(), &vec![[kappa, 0.0, 0.0]; n]).unwrap();
    worst = worst.max(rel(energy_kirchhoff(&arc, &q), 0.5 * l * 3.0 / (4.0 * PI) * kappa * kappa));
    let w0 = 1.3;
    let twist = FrameField::from_intervals(g, UnitQuaternion::identity(), &vec![[0.0, 0.0, w0]; n]).unwrap();
    worst = worst.max(rel(energy_kirchhoff(&twist, &q), 0.5 * l / (2.0 * PI) * w0 * w0));
    check(worst <= 5e-3, format!("energy error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.3e}"))
}

type Criterion = (&'static str, fn() -> Outcome, u64);

fn main() {
    let criteria: [Criterion; 9] = [
        ("isotropic circular Q*", criterion_1, 30),
        ("λ-independence", criterion_2, 90),
        ("penalized convergence", criterion_3, 60),
        ("torsional rigidity", criterion_4, 20),
        ("closed-form minimizer", criterion_5, 20),
        ("splitting", criterion_6, 120),
        ("cell-problem structure", criterion_7, 60),
        ("rod equilibrium", criterion_8, 120),
        ("limit-energy formulas", criterion_9, 10),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > Duration::from_secs(*budget) => Err(format!("{msg}; runtime over budget")),
            other => other,
        };
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {} [{tag}] {name}: {msg} ({:.1}s / {budget}s)", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
