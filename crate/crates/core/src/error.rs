use thiserror::Error;

use crate::grid::ScalarField;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("degenerate box on axis {axis}: lo = {lo} must be < hi = {hi}")]
    DegenerateBox { axis: usize, lo: f64, hi: f64 },
    #[error("ball radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("resolution too small on axis {axis}: {found} nodes, need at least {min}")]
    ResolutionTooSmall { axis: usize, found: usize, min: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("negative density {value} at interior node {node}")]
    NegativeDensity { node: usize, value: f64 },
    #[error("ball domains are only served by the radial backend")]
    BallNotGridable,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("sub-box {0}")]
    SubBox(String),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("grid solves support n = 1 and n = 2, got n = {0}")]
    UnsupportedDimension(usize),
    #[error("linear solve did not converge: relative residual {rel_residual:e} after {iterations} iterations")]
    LinearNonConvergence { iterations: usize, rel_residual: f64 },
    #[error("linearized operator is indefinite (curvature {0:e}); Newton must damp")]
    Indefinite(f64),
    #[error("Newton stagnated at residual {residual:e} (regularization {regularization:e}) after {iterations} steps")]
    Stagnation {
        residual: f64,
        regularization: f64,
        iterations: usize,
        iterate: Box<ScalarField>,
    },
    #[error("Newton hit the iteration cap with residual {residual:e}")]
    IterationCap {
        residual: f64,
        iterations: usize,
        iterate: Box<ScalarField>,
    },
    #[error("radial Newton failed: residual {residual:e} after {iterations} steps")]
    RadialFailure { residual: f64, iterations: usize },
    #[error("right-hand side must be nonnegative, got {value} at {location}")]
    NegativeRhs { value: f64, location: String },
}

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("'t' is only allowed in rhs expressions (offset {offset})")]
    SolutionValueNotAllowed { offset: usize },
    #[error("function '{name}' expects {expected} argument(s), got {found} (offset {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("evaluation error: {0}")]
    Domain(String),
}

/// Violations of the standing hypotheses on a problem instance.
#[derive(Debug, Error)]
pub enum HypothesisError {
    #[error("hypothesis 1 violated: rhs not nondecreasing in t (at node {node}: F({t0}) = {f0} > F({t1}) = {f1})")]
    NotMonotone {
        node: usize,
        t0: f64,
        t1: f64,
        f0: f64,
        f1: f64,
    },
    #[error("hypothesis 1 violated: rhs not continuous/finite in t at node {node}, t = {t}")]
    NotFinite { node: usize, t: f64 },
    #[error("rhs must be nonnegative: F = {value} at node {node}, t = {t}")]
    Negative { node: usize, t: f64, value: f64 },
    #[error("hypothesis 2 violated: rhs density has non-finite integral at t = {t}")]
    NotIntegrable { t: f64 },
    #[error("boundary data must be nonpositive in theorem mode: max boundary value {max}")]
    PositiveBoundary { max: f64 },
    #[error("hypothesis 3 violated: declared seed is not a subsolution ({0})")]
    SeedNotSubsolution(String),
}

#[derive(Debug, Error)]
pub enum FixedPointError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("boundary mismatch: fields differ by {0:e} on the boundary")]
    BoundaryMismatch(f64),
    #[error("perturbation {delta} exceeds the dominating measure of v0 by {excess:e}; the stability lemma needs every density capped by (dd^c v0)^n and fails without such control")]
    CapViolated { delta: f64, excess: f64 },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("branch {branch} did not converge; uniqueness check inconclusive")]
    Inconclusive { branch: usize },
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("malformed dump: {0}")]
    Malformed(String),
}
