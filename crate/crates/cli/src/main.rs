//! `rodlim`: cross-section densities, limit rod energies and rod equilibria from the command line.

mod commands;
mod error;
mod io;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Task;
use error::{CliError, CliResult};
use settings::Settings;

#[derive(Parser)]
#[command(name = "rodlim", version, about = "Incompressible elastic rods: cell problems, limit energies, equilibria")]
struct Cli {
    /// Run configuration (TOML with dotted keys); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more to standard error (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or normalize a cross-section mesh.
    Mesh {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one cell problem.
    Cell {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        material: MaterialArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Penalized problem with this k instead of the constraint.
        #[arg(long, conflicts_with = "constrained")]
        penalty: Option<f64>,
        #[arg(long)]
        constrained: bool,
        /// Include nodal β and λ in the record.
        #[arg(long)]
        fields: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduce the density to its 4×4 matrix.
    Qstar {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        material: MaterialArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, conflicts_with = "constrained")]
        penalty: Option<f64>,
        #[arg(long)]
        constrained: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Torsion function and torsional rigidity.
    Torsion {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write φ at the P2 nodes as CSV.
        #[arg(long)]
        phi: Option<PathBuf>,
    },
    /// Evaluate a limit rod energy.
    RodEnergy {
        /// 2, open23, 3 or above3
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        qstar: Option<PathBuf>,
        /// Displacement profile CSV (regimes open23, 3, above3).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Frame CSV (regime 2).
        #[arg(long)]
        frame: Option<PathBuf>,
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        material: MaterialArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium of the Kirchhoff rod under a dead load.
    RodSolve {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long)]
        qstar: Option<PathBuf>,
        #[command(flatten)]
        material: MaterialArgs,
        #[arg(long)]
        force: Option<PathBuf>,
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        /// minimize or shooting
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Output directory for frame.csv, centerline.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Penalized densities along a k grid against the constrained one.
    GammaCheck {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        material: MaterialArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Comma-separated, strictly increasing.
        #[arg(long)]
        k_grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the task named in the configuration file.
    Run,
}

#[derive(Args)]
struct MeshArgs {
    /// Mesh file; implies --shape file.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// disk, rect or file
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    refine: Option<usize>,
    #[arg(long)]
    aspect: Option<f64>,
}

#[derive(Args)]
struct MaterialArgs {
    /// isotropic or general
    #[arg(long)]
    material: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// 36 comma-separated Mandel entries, row-major.
    #[arg(long)]
    matrix66: Option<String>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long = "F12", allow_negative_numbers = true)]
    f12: Option<f64>,
    #[arg(long = "F13", allow_negative_numbers = true)]
    f13: Option<f64>,
    #[arg(long = "F23", allow_negative_numbers = true)]
    f23: Option<f64>,
    #[arg(long = "t", allow_negative_numbers = true)]
    t: Option<f64>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    constraint_tol: Option<f64>,
    /// direct or minres
    #[arg(long)]
    linear: Option<String>,
}

fn path_value(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

impl MeshArgs {
    fn apply(self, s: &mut Settings) {
        if self.mesh.is_some() && self.shape.is_none() {
            s.set("mesh.shape", "file");
        }
        s.set_opt("mesh.file", path_value(self.mesh));
        s.set_opt("mesh.shape", self.shape);
        s.set_opt("mesh.refine", self.refine.map(|r| r as i64));
        s.set_opt("mesh.aspect", self.aspect);
    }
}

impl MaterialArgs {
    fn apply(self, s: &mut Settings) {
        if self.matrix66.is_some() && self.material.is_none() {
            s.set("material.kind", "general");
        }
        s.set_opt("material.kind", self.material);
        s.set_opt("material.lambda", self.lambda);
        s.set_opt("material.mu", self.mu);
        s.set_opt("material.matrix66", self.matrix66);
    }
}

impl ProfileArgs {
    fn apply(self, s: &mut Settings) {
        s.set_opt("profile.F12", self.f12);
        s.set_opt("profile.F13", self.f13);
        s.set_opt("profile.F23", self.f23);
        s.set_opt("profile.t", self.t);
    }
}

impl SolverArgs {
    fn apply(self, s: &mut Settings) {
        s.set_opt("solver.tol", self.tol);
        s.set_opt("solver.constraint_tol", self.constraint_tol);
        s.set_opt("solver.linear", self.linear);
    }
}

fn apply_mode(s: &mut Settings, penalty: Option<f64>, constrained: bool) {
    if constrained {
        s.remove("cell.penalty");
    }
    s.set_opt("cell.penalty", penalty);
}

fn configure(cli: Cli) -> CliResult<(Task, Settings)> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let task = match cli.command {
        Command::Mesh { mesh, out } => {
            mesh.apply(&mut s);
            s.set_opt("output.out", path_value(out));
            Task::Mesh
        }
        Command::Cell { mesh, material, profile, solver, penalty, constrained, fields, out } => {
            mesh.apply(&mut s);
            material.apply(&mut s);
            profile.apply(&mut s);
            solver.apply(&mut s);
            apply_mode(&mut s, penalty, constrained);
            if fields {
                s.set("cell.fields", true);
            }
            s.set_opt("output.out", path_value(out));
            Task::Cell
        }
        Command::Qstar { mesh, material, solver, penalty, constrained, out, csv } => {
            mesh.apply(&mut s);
            material.apply(&mut s);
            solver.apply(&mut s);
            apply_mode(&mut s, penalty, constrained);
            s.set_opt("output.out", path_value(out));
            s.set_opt("output.csv", path_value(csv));
            Task::QStar
        }
        Command::Torsion { mesh, out, phi } => {
            mesh.apply(&mut s);
            s.set_opt("output.out", path_value(out));
            s.set_opt("output.phi", path_value(phi));
            Task::Torsion
        }
        Command::RodEnergy { regime, qstar, profile, frame, mesh, material, out } => {
            mesh.apply(&mut s);
            material.apply(&mut s);
            s.set_opt("rod.regime", regime);
            s.set_opt("rod.qstar", path_value(qstar));
            s.set_opt("rod.profile", path_value(profile));
            s.set_opt("rod.frame", path_value(frame));
            s.set_opt("output.out", path_value(out));
            Task::RodEnergy
        }
        Command::RodSolve { mesh, qstar, material, force, length, nodes, method, tol, max_iter, out } => {
            mesh.apply(&mut s);
            material.apply(&mut s);
            s.set_opt("rod.qstar", path_value(qstar));
            s.set_opt("rod.force", path_value(force));
            s.set_opt("rod.length", length);
            s.set_opt("rod.nodes", nodes.map(|n| n as i64));
            s.set_opt("rod.method", method);
            s.set_opt("rod.tol", tol);
            s.set_opt("rod.max_iter", max_iter.map(|n| n as i64));
            s.set_opt("output.out", path_value(out));
            Task::RodSolve
        }
        Command::GammaCheck { mesh, material, profile, solver, k_grid, out } => {
            mesh.apply(&mut s);
            material.apply(&mut s);
            profile.apply(&mut s);
            solver.apply(&mut s);
            s.set_opt("gamma.k_grid", k_grid);
            s.set_opt("output.out", path_value(out));
            Task::GammaCheck
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(CliError::Config("run needs --config".into()));
            }
            let name = s.opt_str("task")?.ok_or_else(|| CliError::Config("configuration has no `task`".into()))?;
            Task::parse(name)?
        }
    };
    Ok((task, s))
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("RODLIM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("RODLIM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let outcome = init_threads().and_then(|_| configure(cli)).and_then(|(task, s)| commands::run(task, &s));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            println!("{}", serde_json::to_string(&e.to_json()).expect("error record serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
