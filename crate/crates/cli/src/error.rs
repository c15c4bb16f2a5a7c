use std::path::Path;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rodlim_core::Error),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Invariant(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Config(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        use rodlim_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Core(e) => match e {
                E::DegenerateMesh(_)
                | E::NotCoercive { .. }
                | E::InvalidInput(_)
                | E::Parse { .. }
                | E::MissingField(_)
                | E::ForceNotBalanced(_)
                | E::Io(_) => 2,
                E::SolverFailure(_) | E::SingularKkt(_) | E::NotConverged { .. } => 3,
                E::ConstraintViolation { .. } | E::MonotonicityViolation { .. } => 4,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "solver",
            _ => "invariant",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() } })
    }
}
