//! Finite-difference solver for the Dirichlet problem
//! `(dd^c u)^n = F(u, ·) dμ` on boxes in `C^n`, with the constructive
//! fixed-point iteration, balayage, and numerical checks of the comparison
//! principle and related inequalities.
//!
//! Convention: `dd^c = 2i∂∂̄`, so `(dd^c u)^n = 4^n n! det(∂²u/∂z_j∂z̄_k) dλ`.

pub mod dump;
pub mod error;
pub mod expr;
pub mod fixed_point;
pub mod grid;
pub mod inner;
pub mod linalg;
pub mod operator;
pub mod radial;
pub mod rhs;
pub mod verification;

pub use error::{
    DumpError, ExprError, FixedPointError, GridError, HypothesisError, SolverError, VerifyError,
};
pub use expr::{parse_expression, Expression};
pub use fixed_point::{
    apply_t, balayage_step, initial_iterate, solve_mam, solve_mam_from, subsolution_check, Mode,
    OuterConfig, Problem, ProblemSpec, Solution, SubBox, SubsolutionReport,
};
pub use grid::{build_grid, integrate, DensityField, Domain, Grid, HermitianField, ScalarField};
pub use inner::{maximal_extension, solve_ma_fixed_rhs, solve_poisson, MaSolve, SolverConfig};
pub use linalg::PreconditionerKind;
pub use operator::{complex_hessian, ma_density, MaDensity};
pub use radial::{solve_radial, RadialProfile};
pub use rhs::{RhsFunction, Source};
pub use verification::CheckReport;
