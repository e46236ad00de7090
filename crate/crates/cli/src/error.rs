use mongeampere::{DumpError, FixedPointError, SolverError, VerifyError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for rejected input, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Dump(_) => 2,
            Self::FixedPoint(e) => fixed_point_code(e),
            Self::Verify(e) => match e {
                VerifyError::FixedPoint(e) => fixed_point_code(e),
                VerifyError::Solver(e) => solver_code(e),
                VerifyError::Grid(_)
                | VerifyError::BoundaryMismatch(_)
                | VerifyError::CapViolated { .. }
                | VerifyError::Invalid(_) => 2,
                VerifyError::Inconclusive { .. } => 3,
            },
            Self::Solver(e) => solver_code(e),
            Self::Io(_) | Self::Csv(_) => 3,
        }
    }
}

fn fixed_point_code(e: &FixedPointError) -> i32 {
    match e {
        FixedPointError::Solver(e) => solver_code(e),
        FixedPointError::Grid(_)
        | FixedPointError::Hypothesis(_)
        | FixedPointError::Expr(_)
        | FixedPointError::Invalid(_) => 2,
    }
}

fn solver_code(e: &SolverError) -> i32 {
    match e {
        SolverError::Grid(_)
        | SolverError::Config(_)
        | SolverError::UnsupportedDimension(_)
        | SolverError::NegativeRhs { .. } => 2,
        _ => 3,
    }
}
