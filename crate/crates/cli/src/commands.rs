use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use rodlim_core::cell::{reduce_qstar, LinearSolver};
use rodlim_core::equilibrium::{minimize_j2, solve_isotropic_disk, DEFAULT_INTERVALS};
use rodlim_core::gamma::{gamma_check, DEFAULT_K_GRID};
use rodlim_core::material::Provenance;
use rodlim_core::mesh_io::{read_mesh, write_mesh};
use rodlim_core::rod::{energy_alpha, energy_kirchhoff};
use rodlim_core::torsion::{qstar_isotropic, solve_torsion};
use rodlim_core::{
    AffineStrainProfile, CellProblem, CrossSection, ElasticTensor, EquilibriumOptions, FemOptions, ForceProfile,
    FrameField, Grid1D, Init, Mode, QStarForm, Regime, RodProfile,
};

use crate::error::{CliError, CliResult};
use crate::io::{column, emit_json, num, read_table, write_atomic, write_table};
use crate::settings::Settings;

pub const PROFILE_COLUMNS: [&str; 7] = ["x1", "v1", "dv1", "v2", "dv2", "w", "z"];
pub const FORCE_COLUMNS: [&str; 4] = ["x1", "f1", "f2", "f3"];
pub const FRAME_COLUMNS: [&str; 5] = ["x1", "qw", "qx", "qy", "qz"];
pub const CENTERLINE_COLUMNS: [&str; 4] = ["x1", "u1", "u2", "u3"];
pub const PHI_COLUMNS: [&str; 4] = ["node", "x2", "x3", "phi"];
pub const GAMMA_COLUMNS: [&str; 4] = ["k", "qk", "gap", "div_residual"];
pub const QSTAR_COLUMNS: [&str; 5] = ["row", "F12", "F13", "F23", "t"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mesh,
    Cell,
    QStar,
    Torsion,
    RodEnergy,
    RodSolve,
    GammaCheck,
}

impl Task {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "mesh" => Task::Mesh,
            "cell" => Task::Cell,
            "qstar" => Task::QStar,
            "torsion" => Task::Torsion,
            "rod-energy" => Task::RodEnergy,
            "rod-solve" => Task::RodSolve,
            "gamma-check" => Task::GammaCheck,
            other => return Err(CliError::Config(format!("unknown task `{other}`"))),
        })
    }
}

pub fn run(task: Task, s: &Settings) -> CliResult<()> {
    match task {
        Task::Mesh => mesh(s),
        Task::Cell => cell(s),
        Task::QStar => qstar(s),
        Task::Torsion => torsion(s),
        Task::RodEnergy => rod_energy(s),
        Task::RodSolve => rod_solve(s),
        Task::GammaCheck => gamma(s),
    }
}

fn out_path(s: &Settings, key: &str) -> CliResult<Option<PathBuf>> {
    s.opt_path(key)
}

fn existing(path: PathBuf) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("{}: no such file", path.display())))
    }
}

fn load_mesh(s: &Settings) -> CliResult<CrossSection> {
    let file = s.opt_path("mesh.file")?;
    let default = if file.is_some() { "file" } else { "disk" };
    let refine = s.usize("mesh.refine", 3)?;
    let cs = match s.str("mesh.shape", default)? {
        "disk" => CrossSection::generate_disk(refine)?,
        "rect" => CrossSection::generate_rectangle(s.f64("mesh.aspect", 1.0)?, refine)?,
        "file" => {
            let path = existing(file.ok_or_else(|| CliError::Config("mesh.shape = file needs mesh.file".into()))?)?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            read_mesh(&text)
                .map_err(|e| match e {
                    rodlim_core::Error::Parse { line, msg } => CliError::Config(format!("{}:{line}: {msg}", path.display())),
                    other => other.into(),
                })?
                .0
        }
        other => return Err(CliError::Config(format!("unknown mesh shape `{other}` (disk, rect or file)"))),
    };
    cs.check_invariants().map_err(|e| CliError::Invariant(e.to_string()))?;
    Ok(cs)
}

fn load_material(s: &Settings) -> CliResult<ElasticTensor> {
    match s.str("material.kind", "isotropic")? {
        "isotropic" => Ok(ElasticTensor::isotropic(s.f64("material.lambda", 1.0)?, s.f64("material.mu", 1.0)?)?),
        "general" => {
            let m = s
                .opt_f64_list("material.matrix66")?
                .ok_or_else(|| CliError::Config("material.kind = general needs material.matrix66".into()))?;
            Ok(ElasticTensor::from_row_major(&m)?)
        }
        other => Err(CliError::Config(format!("unknown material kind `{other}` (isotropic or general)"))),
    }
}

fn fem_options(s: &Settings) -> CliResult<FemOptions> {
    let d = FemOptions::default();
    let solver = match s.str("solver.linear", "direct")? {
        "direct" => LinearSolver::Direct,
        "minres" => LinearSolver::Minres { initial: None, max_iter: s.usize("solver.max_iter", 100_000)? },
        other => return Err(CliError::Config(format!("unknown linear solver `{other}` (direct or minres)"))),
    };
    Ok(FemOptions {
        solver,
        tol: s.f64("solver.tol", d.tol)?,
        constraint_tol: s.f64("solver.constraint_tol", d.constraint_tol)?,
        gauge: None,
    })
}

fn profile(s: &Settings) -> CliResult<AffineStrainProfile> {
    Ok(AffineStrainProfile::new(
        s.f64("profile.F12", 0.0)?,
        s.f64("profile.F13", 0.0)?,
        s.f64("profile.F23", 0.0)?,
        s.f64("profile.t", 0.0)?,
    ))
}

fn mode(s: &Settings) -> CliResult<Mode> {
    Ok(match s.opt_f64("cell.penalty")? {
        Some(k) => Mode::Penalized(k),
        None => Mode::Constrained,
    })
}

fn mesh_json(cs: &CrossSection) -> Value {
    let st = cs.stats();
    json!({
        "vertices": st.vertices,
        "triangles": st.triangles,
        "boundary_edges": st.boundary_edges,
        "h_max": st.h_max,
        "area": cs.measure(),
        "m2": cs.m2(),
        "m3": cs.m3(),
    })
}

fn material_json(l: &ElasticTensor) -> Value {
    match l.provenance() {
        Provenance::Isotropic { lambda, mu } => json!({ "kind": "isotropic", "lambda": lambda, "mu": mu }),
        Provenance::General => json!({ "kind": "general", "min_eigenvalue": l.validate().min_eigenvalue }),
    }
}

fn fem_json(o: &FemOptions) -> Value {
    let solver = match &o.solver {
        LinearSolver::Direct => json!("direct"),
        LinearSolver::Minres { max_iter, .. } => json!({ "minres": { "max_iter": max_iter } }),
    };
    json!({ "tol": o.tol, "constraint_tol": o.constraint_tol, "solver": solver })
}

/// Self-describing block attached to every record.
fn meta(s: &Settings, mesh: Option<&CrossSection>, extra: Value) -> Value {
    let mut m = json!({
        "tool": "rodlim",
        "version": env!("CARGO_PKG_VERSION"),
        "settings": s.to_json(),
    });
    if let Some(cs) = mesh {
        m["mesh"] = mesh_json(cs);
    }
    if let Value::Object(extra) = extra {
        for (k, v) in extra {
            m[k] = v;
        }
    }
    m
}

fn qstar_json(q: &QStarForm) -> Value {
    json!({ "matrix": q.matrix, "alpha": q.alpha, "source": q.source })
}

fn mesh(s: &Settings) -> CliResult<()> {
    let cs = load_mesh(s)?;
    match out_path(s, "output.out")? {
        Some(p) => {
            write_atomic(&p, write_mesh(&cs).as_bytes())?;
            emit_json(None, &json!({ "mesh": mesh_json(&cs), "out": p.display().to_string() }))
        }
        None => {
            print!("{}", write_mesh(&cs));
            Ok(())
        }
    }
}

fn cell(s: &Settings) -> CliResult<()> {
    let cs = load_mesh(s)?;
    let l = load_material(s)?;
    let opts = fem_options(s)?;
    let p = CellProblem::new(&cs, &l)?;
    let xi = profile(s)?;
    let sol = p.solve(&xi, mode(s)?, &opts)?;
    let res = p.el_residual(&sol);
    let (mhat, mcheck) = p.stress_moments(&sol);
    let mut rec = json!({
        "profile": xi,
        "energy": sol.energy,
        "div_residual": sol.div_residual,
        "div_l2": sol.div_l2,
        "gauge": sol.gauge,
        "k": sol.k,
        "algebraic_residual": sol.algebraic_residual,
        "iterations": sol.iterations,
        "residuals": res,
        "mhat": mhat,
        "mcheck": mcheck,
        "meta": meta(s, Some(&cs), json!({ "material": material_json(&l), "tolerances": fem_json(&opts) })),
    });
    if s.bool("cell.fields")? {
        rec["nodes"] = json!(p.space().nodes());
        rec["beta"] = json!(sol.beta);
        rec["lambda"] = json!(sol.lambda);
    }
    emit_json(out_path(s, "output.out")?.as_deref(), &rec)
}

fn check_form(q: &QStarForm) -> CliResult<()> {
    let defect = q.symmetry_defect();
    if defect > 1e-8 * q.frobenius_norm().max(1.0) {
        return Err(CliError::Invariant(format!("reduced form is not symmetric (defect {defect:.3e})")));
    }
    let min = q.min_eigenvalue();
    if min < -1e-10 * q.frobenius_norm() {
        return Err(CliError::Invariant(format!("reduced form is indefinite (eigenvalue {min:.3e})")));
    }
    Ok(())
}

fn qstar(s: &Settings) -> CliResult<()> {
    let cs = load_mesh(s)?;
    let l = load_material(s)?;
    let opts = fem_options(s)?;
    let p = CellProblem::new(&cs, &l)?;
    let q = reduce_qstar(&p, mode(s)?, &opts)?;
    check_form(&q)?;
    let m = meta(
        s,
        Some(&cs),
        json!({
            "material": material_json(&l),
            "tolerances": fem_json(&opts),
            "cross_block": q.cross_block(),
            "min_eigenvalue": q.min_eigenvalue(),
        }),
    );
    if let Some(csv) = out_path(s, "output.csv")? {
        let names = ["F12", "F13", "F23", "t"];
        let mut rows: Vec<Vec<String>> = (0..4)
            .map(|i| std::iter::once(names[i].to_string()).chain(q.matrix[i].iter().map(|&x| num(x))).collect())
            .collect();
        rows.push(vec!["alpha".into(), num(q.alpha), String::new(), String::new(), String::new()]);
        write_table(&csv, &QSTAR_COLUMNS, rows, &m)?;
    }
    let mut rec = qstar_json(&q);
    rec["meta"] = m;
    emit_json(out_path(s, "output.out")?.as_deref(), &rec)
}

fn torsion(s: &Settings) -> CliResult<()> {
    let cs = load_mesh(s)?;
    let t = solve_torsion(&cs)?;
    if t.tau > cs.m2() + cs.m3() + 1e-10 {
        return Err(CliError::Invariant(format!("τ = {} exceeds the polar moment {}", t.tau, cs.m2() + cs.m3())));
    }
    let m = meta(s, Some(&cs), json!({}));
    if let Some(csv) = out_path(s, "output.phi")? {
        let rows = t
            .nodes
            .iter()
            .zip(&t.phi)
            .enumerate()
            .map(|(i, (x, phi))| vec![i.to_string(), num(x[0]), num(x[1]), num(*phi)]);
        write_table(&csv, &PHI_COLUMNS, rows, &m)?;
    }
    let rec = json!({
        "tau": t.tau,
        "neumann_residual": t.neumann_residual,
        "polar_moment": cs.m2() + cs.m3(),
        "correction": t.correction,
        "phi_l2": t.phi_l2,
        "phi_mean": t.phi_mean,
        "meta": m,
    });
    emit_json(out_path(s, "output.out")?.as_deref(), &rec)
}

fn read_qstar(path: &Path) -> CliResult<QStarForm> {
    let path = existing(path.to_path_buf())?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let q: QStarForm =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    check_form(&q)?;
    Ok(q)
}

/// Q* from a saved record, or computed from mesh and material.
fn resolve_qstar(s: &Settings) -> CliResult<(QStarForm, Value)> {
    if let Some(p) = s.opt_path("rod.qstar")? {
        let q = read_qstar(&p)?;
        return Ok((q, json!({ "qstar_file": p.display().to_string() })));
    }
    let cs = load_mesh(s)?;
    let l = load_material(s)?;
    let q = match l.provenance() {
        Provenance::Isotropic { mu, .. } => qstar_isotropic(&cs, mu, solve_torsion(&cs)?.tau)?,
        Provenance::General => {
            let opts = fem_options(s)?;
            reduce_qstar(&CellProblem::new(&cs, &l)?, Mode::Constrained, &opts)?
        }
    };
    check_form(&q)?;
    Ok((q, json!({ "mesh": mesh_json(&cs), "material": material_json(&l) })))
}

fn read_frame(path: &Path) -> CliResult<FrameField> {
    let rows = read_table(&existing(path.to_path_buf())?, &FRAME_COLUMNS, &[])?;
    let grid = Grid1D::new(column(&rows, 0))?;
    let q: Vec<[f64; 4]> = rows.iter().map(|r| [r[1].unwrap(), r[2].unwrap(), r[3].unwrap(), r[4].unwrap()]).collect();
    Ok(FrameField::from_components(grid, &q)?)
}

fn read_profile(path: &Path) -> CliResult<RodProfile> {
    let rows = read_table(&existing(path.to_path_buf())?, &PROFILE_COLUMNS, &["z"])?;
    let grid = Grid1D::new(column(&rows, 0))?;
    let z: Vec<Option<f64>> = rows.iter().map(|r| r[6]).collect();
    let z = if z.iter().all(Option::is_some) {
        Some(z.into_iter().flatten().collect())
    } else if z.iter().all(Option::is_none) {
        None
    } else {
        return Err(CliError::Config(format!("{}: column z is partially empty", path.display())));
    };
    Ok(RodProfile::new(
        grid,
        column(&rows, 1),
        column(&rows, 2),
        column(&rows, 3),
        column(&rows, 4),
        column(&rows, 5),
        z,
    )?)
}

fn rod_energy(s: &Settings) -> CliResult<()> {
    let regime = s
        .opt_str("rod.regime")?
        .ok_or_else(|| CliError::Config("rod-energy needs a regime (2, open23, 3 or above3)".into()))?
        .to_string();
    let (q, source) = resolve_qstar(s)?;
    let energy = if regime == "2" {
        if s.contains("rod.profile") {
            return Err(CliError::Config("regime 2 takes a frame, not a displacement profile".into()));
        }
        let path = s.opt_path("rod.frame")?.ok_or_else(|| CliError::Config("regime 2 needs a frame CSV".into()))?;
        let frame = read_frame(&path)?;
        frame.check_invariants().map_err(|e| CliError::Invariant(e.to_string()))?;
        energy_kirchhoff(&frame, &q)
    } else {
        let r = match regime.as_str() {
            "open23" => Regime::Open23,
            "3" => Regime::Equal3,
            "above3" => Regime::Above3,
            other => return Err(CliError::Config(format!("unknown regime `{other}` (2, open23, 3 or above3)"))),
        };
        if s.contains("rod.frame") {
            return Err(CliError::Config(format!("regime {regime} takes a displacement profile, not a frame")));
        }
        let path =
            s.opt_path("rod.profile")?.ok_or_else(|| CliError::Config(format!("regime {regime} needs a profile CSV")))?;
        energy_alpha(&read_profile(&path)?, r, &q)?
    };
    let rec = json!({
        "regime": regime,
        "energy": energy,
        "qstar": qstar_json(&q),
        "meta": meta(s, None, source),
    });
    emit_json(out_path(s, "output.out")?.as_deref(), &rec)
}

fn load_force(s: &Settings) -> CliResult<ForceProfile> {
    let length = s.opt_f64("rod.length")?;
    let nodes = s.opt_usize("rod.nodes")?;
    match s.opt_path("rod.force")? {
        Some(p) => {
            let rows = read_table(&existing(p.clone())?, &FORCE_COLUMNS, &[])?;
            let grid = Grid1D::new(column(&rows, 0))?;
            if let Some(l) = length {
                if (l - grid.length()).abs() > 1e-12 * l.abs().max(1.0) {
                    return Err(CliError::Config(format!("length {l} disagrees with the force grid ({})", grid.length())));
                }
            }
            if let Some(n) = nodes {
                if n != grid.n_nodes() {
                    return Err(CliError::Config(format!("{n} nodes requested, force grid has {}", grid.n_nodes())));
                }
            }
            let f: Vec<[f64; 3]> = rows.iter().map(|r| [r[1].unwrap(), r[2].unwrap(), r[3].unwrap()]).collect();
            Ok(ForceProfile::new(grid, f)?)
        }
        None => {
            let n = nodes.unwrap_or(DEFAULT_INTERVALS + 1);
            if n < 3 {
                return Err(CliError::Config(format!("need at least 3 nodes, got {n}")));
            }
            Ok(ForceProfile::zero(Grid1D::uniform(length.unwrap_or(1.0), n - 1)?))
        }
    }
}

fn rod_solve(s: &Settings) -> CliResult<()> {
    let force = load_force(s)?;
    let grid = force.grid().clone();
    let d = EquilibriumOptions::default();
    let opts = EquilibriumOptions { tol: s.f64("rod.tol", d.tol)?, max_iter: s.usize("rod.max_iter", d.max_iter)? };
    let method = s.str("rod.method", "minimize")?.to_string();
    let (result, q, source) = match method.as_str() {
        "minimize" => {
            let (q, source) = resolve_qstar(s)?;
            (minimize_j2(&force, &q, &grid, Init::Straight, &opts)?, q, source)
        }
        "shooting" => {
            if s.contains("rod.qstar") || s.contains("mesh.file") || s.str("mesh.shape", "disk")? != "disk" {
                return Err(CliError::Config("shooting applies to the isotropic disk only".into()));
            }
            let Provenance::Isotropic { mu, .. } = load_material(s)?.provenance() else {
                return Err(CliError::Config("shooting needs an isotropic material".into()));
            };
            let r = solve_isotropic_disk(&force, mu, &grid, &opts)?;
            let q = rodlim_core::equilibrium::isotropic_disk_qstar(mu);
            (r, q, json!({ "material": { "kind": "isotropic", "mu": mu } }))
        }
        other => return Err(CliError::Config(format!("unknown method `{other}` (minimize or shooting)"))),
    };
    result.frame.check_invariants().map_err(|e| CliError::Invariant(e.to_string()))?;
    let mut extra = source;
    extra["tolerances"] = json!(opts);
    let m = meta(s, None, extra);
    let summary = json!({
        "method": method,
        "energy": result.energy,
        "el_residual": result.el_residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "stationarity": result.stationarity,
        "length": grid.length(),
        "nodes": grid.n_nodes(),
        "qstar": qstar_json(&q),
        "meta": m,
    });
    let stalled = (!result.converged).then(|| {
        CliError::Solver(format!(
            "equilibrium iteration stopped after {} iterations at stationarity {:.3e}",
            result.iterations, result.stationarity
        ))
    });
    match out_path(s, "output.out")? {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let x = grid.nodes();
            let frame_rows = result.frame.rotations().iter().zip(x).map(|(r, &x)| {
                let c = r.quaternion().coords;
                vec![num(x), num(c.w), num(c.x), num(c.y), num(c.z)]
            });
            write_table(&dir.join("frame.csv"), &FRAME_COLUMNS, frame_rows, &summary["meta"])?;
            let u_rows = result.u.iter().zip(x).map(|(u, &x)| vec![num(x), num(u[0]), num(u[1]), num(u[2])]);
            write_table(&dir.join("centerline.csv"), &CENTERLINE_COLUMNS, u_rows, &summary["meta"])?;
            write_atomic(&dir.join("summary.json"), &crate::io::json_bytes(&summary))?;
        }
        None if stalled.is_none() => emit_json(None, &summary)?,
        None => {}
    }
    // unconverged iterates are still written to --out for inspection
    stalled.map_or(Ok(()), Err)
}

fn gamma(s: &Settings) -> CliResult<()> {
    let cs = load_mesh(s)?;
    let l = load_material(s)?;
    let opts = fem_options(s)?;
    let ks = s.opt_f64_list("gamma.k_grid")?.unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config("penalty grid must be strictly increasing".into()));
    }
    let p = CellProblem::new(&cs, &l)?;
    let xi = profile(s)?;
    let table = gamma_check(&p, &xi, &ks, &opts)?;
    let m = meta(s, Some(&cs), json!({ "material": material_json(&l), "tolerances": fem_json(&opts) }));
    let mut summary = json!({
        "profile": xi,
        "constrained": table.constrained,
        "rate_constant": table.rate_constant,
        "extrapolated": table.extrapolated,
        "monotone_tolerance": table.monotone_tolerance,
        "meta": m,
    });
    match out_path(s, "output.out")? {
        Some(csv) => {
            let rows = table.rows.iter().map(|r| vec![num(r.k), num(r.value), num(r.gap), num(r.div_residual)]);
            write_table(&csv, &GAMMA_COLUMNS, rows, &summary)
        }
        None => {
            summary["rows"] = json!(table.rows);
            emit_json(None, &summary)
        }
    }
}
