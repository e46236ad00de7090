//! Fixed right-hand-side Dirichlet solves: the Poisson problem, the `n = 2`
//! Monge-Ampere problem `32 det H(u) = g` by damped Newton, and the
//! homogeneous (maximal) case.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::grid::{DensityField, Grid, ScalarField};
use crate::linalg::{
    bicgstab, pcg, LinearizedMa2, NegLaplacian, Preconditioner, PreconditionerKind, RedBlackGs,
    SpectralLaplace,
};
use crate::operator::{ma_constant, Hess2, Stencil};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sup-norm residual threshold for every returned solution.
    pub tol_inner: f64,
    pub max_newton: usize,
    /// Backtracking factor of the Newton line search.
    pub damping: f64,
    /// Smallest admissible Newton step length.
    pub min_step: f64,
    /// Eigenvalue floor `εpsd` for accepted iterates.
    pub psd_guard: f64,
    /// Regularizations added to degenerate targets, warm-started in order.
    pub regularization_ladder: Vec<f64>,
    /// Relative residual for linear solves of the Poisson problem.
    pub linear_rel_tol: f64,
    /// Loosest relative residual accepted for the linear solve inside a Newton step.
    pub newton_linear_rel_tol: f64,
    pub max_linear_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_inner: 1e-10,
            max_newton: 50,
            damping: 0.5,
            min_step: 1e-4,
            psd_guard: 1e-12,
            regularization_ladder: vec![1e-2, 1e-4, 1e-6, 0.0],
            linear_rel_tol: 1e-12,
            newton_linear_rel_tol: 1e-2,
            max_linear_iter: 2000,
            preconditioner: PreconditionerKind::Spectral,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.to_string()));
        if !(self.tol_inner > 0.0) {
            return bad("tol_inner must be > 0");
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad("damping must lie in (0, 1)");
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return bad("min_step must lie in (0, 1]");
        }
        if self.max_newton == 0 || self.max_linear_iter == 0 {
            return bad("iteration caps must be positive");
        }
        let ladder = &self.regularization_ladder;
        if ladder.is_empty() || *ladder.last().unwrap() != 0.0 {
            return bad("regularization ladder must end at 0");
        }
        if ladder.windows(2).any(|w| w[1] > w[0]) || ladder.iter().any(|v| *v < 0.0) {
            return bad("regularization ladder must be nonnegative and nonincreasing");
        }
        if !(self.linear_rel_tol > 0.0 && self.newton_linear_rel_tol > 0.0) {
            return bad("linear tolerances must be > 0");
        }
        Ok(())
    }
}

/// Outcome of a fixed right-hand-side solve.
#[derive(Clone, Debug)]
pub struct MaSolve {
    pub u: ScalarField,
    /// Sup-norm of `4^n n! det H(u) - g` over interior nodes.
    pub residual: f64,
    pub newton_steps: usize,
    pub psh_defect: f64,
}

fn poisson_preconditioner(grid: &Grid, kind: PreconditionerKind) -> Box<dyn Preconditioner> {
    let unit = vec![1.0; grid.dim()];
    match kind {
        PreconditionerKind::RedBlackGaussSeidel => Box::new(RedBlackGs::new(grid, &unit)),
        PreconditionerKind::Spectral => Box::new(SpectralLaplace::new(grid, &unit)),
    }
}

fn check_boundary_grid(rhs_len: usize, boundary: &ScalarField) -> Result<Arc<Grid>, SolverError> {
    let grid = boundary.grid().clone();
    if rhs_len != grid.interior_len() {
        return Err(crate::error::GridError::LengthMismatch {
            expected: grid.interior_len(),
            found: rhs_len,
        }
        .into());
    }
    Ok(grid)
}

/// Solves `Δ_h u = rhs` (sum of 3-point second differences over all real
/// axes) with Dirichlet data from `boundary`. `rhs` is indexed by interior
/// slot and may have any sign.
pub fn solve_poisson(
    rhs: &[f64],
    boundary: &ScalarField,
    cfg: &SolverConfig,
) -> Result<ScalarField, SolverError> {
    let grid = check_boundary_grid(rhs.len(), boundary)?;
    let mut u = boundary.values().to_vec();
    for &i in grid.interior() {
        u[i] = 0.0;
    }
    poisson_into(&grid, rhs, &mut u, cfg)?;
    Ok(ScalarField::new(grid, u)?)
}

fn poisson_into(
    grid: &Arc<Grid>,
    rhs: &[f64],
    u: &mut [f64],
    cfg: &SolverConfig,
) -> Result<(), SolverError> {
    let st = Stencil::new(grid);
    let op = NegLaplacian::new(grid.clone());
    let pc = poisson_preconditioner(grid, cfg.preconditioner);
    let mut b = vec![0.0; grid.len()];
    let mut delta = vec![0.0; grid.len()];
    let mut last = (0usize, f64::INFINITY);
    // iterative refinement: each round reduces the residual by linear_rel_tol
    for _ in 0..6 {
        let mut sup = 0.0f64;
        for (slot, &i) in grid.interior().iter().enumerate() {
            let r = rhs[slot] - st.laplacian(u, i);
            sup = sup.max(r.abs());
            b[i] = -r;
        }
        if sup < cfg.tol_inner {
            return Ok(());
        }
        delta.iter_mut().for_each(|v| *v = 0.0);
        let stats = pcg(&op, pc.as_ref(), &b, &mut delta, cfg.linear_rel_tol, cfg.max_linear_iter);
        last = (stats.iterations, stats.rel_residual);
        for &i in grid.interior() {
            u[i] += delta[i];
        }
    }
    Err(SolverError::LinearNonConvergence {
        iterations: last.0,
        rel_residual: last.1,
    })
}

/// Solves `(dd^c u)^n = g dλ`, i.e. `4^n n! det H(u) = g`, with Dirichlet data
/// from `boundary`. `n = 1` is a Poisson solve; `n = 2` runs damped Newton.
pub fn solve_ma_fixed_rhs(
    g: &DensityField,
    boundary: &ScalarField,
    cfg: &SolverConfig,
) -> Result<MaSolve, SolverError> {
    solve_ma_fixed_rhs_from(g, boundary, cfg, None)
}

/// As [`solve_ma_fixed_rhs`], optionally warm-starting Newton from `start`
/// (whose boundary values are replaced by `boundary`'s).
pub fn solve_ma_fixed_rhs_from(
    g: &DensityField,
    boundary: &ScalarField,
    cfg: &SolverConfig,
    start: Option<&ScalarField>,
) -> Result<MaSolve, SolverError> {
    cfg.validate()?;
    let grid = check_boundary_grid(g.values().len(), boundary)?;
    if !grid.same_layout(g.grid()) {
        return Err(crate::error::GridError::GridMismatch.into());
    }
    match grid.n() {
        1 => {
            let u = solve_poisson(g.values(), boundary, cfg)?;
            let (residual, psh_defect) = residual_and_defect(&u, g.values());
            Ok(MaSolve {
                u,
                residual,
                newton_steps: 0,
                psh_defect,
            })
        }
        2 => newton_ma2(&grid, g.values(), boundary, cfg, start),
        n => Err(SolverError::UnsupportedDimension(n)),
    }
}

fn residual_and_defect(u: &ScalarField, g: &[f64]) -> (f64, f64) {
    let grid = u.grid();
    let st = Stencil::new(grid);
    let (ma, defect) = crate::operator::signed_ma(grid, &st, u.values());
    let res = ma
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (res, defect)
}

struct Eval2 {
    hess: Vec<Hess2>,
    // 32 det H - target on the full grid (zero on the boundary)
    residual: Vec<f64>,
    sup: f64,
    l2: f64,
    min_eig: f64,
}

fn evaluate2(grid: &Grid, st: &Stencil, u: &[f64], target: &[f64]) -> Eval2 {
    let c = ma_constant(2);
    let hess: Vec<Hess2> = grid.interior().par_iter().map(|&i| st.hessian2(u, i)).collect();
    let mut residual = vec![0.0; grid.len()];
    let (mut sup, mut l2, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for ((h, &i), t) in hess.iter().zip(grid.interior()).zip(target) {
        let r = c * h.det() - t;
        residual[i] = r;
        sup = sup.max(r.abs());
        l2 += r * r;
        min_eig = min_eig.min(h.min_eigenvalue());
    }
    Eval2 {
        hess,
        residual,
        sup,
        l2: l2.sqrt(),
        min_eig,
    }
}

/// Laplacian initialization: if `H = λI` then `det H = λ^n` and `Δu = 4nλ`.
fn laplacian_start(
    grid: &Arc<Grid>,
    target: &[f64],
    boundary: &ScalarField,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    let n = grid.n() as f64;
    let c = ma_constant(grid.n());
    let rhs: Vec<f64> = target
        .iter()
        .map(|t| 4.0 * n * (t.max(0.0) / c).powf(1.0 / n))
        .collect();
    Ok(solve_poisson(&rhs, boundary, cfg)?.into_values())
}

fn newton_ma2(
    grid: &Arc<Grid>,
    g: &[f64],
    boundary: &ScalarField,
    cfg: &SolverConfig,
    start: Option<&ScalarField>,
) -> Result<MaSolve, SolverError> {
    let st = Stencil::new(grid);
    let first_rung = cfg.regularization_ladder[0];
    let degenerate = g.iter().cloned().fold(f64::INFINITY, f64::min) < first_rung;
    let ladder: Vec<f64> = if degenerate {
        cfg.regularization_ladder.clone()
    } else {
        vec![0.0]
    };

    let mut u = match start {
        Some(s) => s.with_boundary_of(boundary).into_values(),
        None => {
            let shifted: Vec<f64> = g.iter().map(|v| v + ladder[0]).collect();
            let lap = laplacian_start(grid, &shifted, boundary, cfg)?;
            let lap_eig = evaluate2(grid, &st, &lap, &shifted).min_eig;
            let own_eig = evaluate2(grid, &st, boundary.values(), &shifted).min_eig;
            // the cofactor linearization is only elliptic inside the psh cone
            if lap_eig < -cfg.psd_guard && own_eig > lap_eig {
                boundary.values().to_vec()
            } else {
                lap
            }
        }
    };

    let mut total_steps = 0;
    let mut target = vec![0.0; g.len()];
    for (k, &eps) in ladder.iter().enumerate() {
        let last = k + 1 == ladder.len();
        let tol = if last {
            cfg.tol_inner
        } else {
            cfg.tol_inner.max(0.1 * eps)
        };
        for (t, v) in target.iter_mut().zip(g) {
            *t = v + eps;
        }
        let steps = newton_rung(grid, &st, &target, &mut u, cfg, eps, tol)?;
        total_steps += steps;
    }
    let u = ScalarField::new(grid.clone(), u)?;
    let (residual, psh_defect) = residual_and_defect(&u, g);
    Ok(MaSolve {
        u,
        residual,
        newton_steps: total_steps,
        psh_defect,
    })
}

fn newton_rung(
    grid: &Arc<Grid>,
    st: &Stencil,
    target: &[f64],
    u: &mut Vec<f64>,
    cfg: &SolverConfig,
    eps: f64,
    tol: f64,
) -> Result<usize, SolverError> {
    let mut cur = evaluate2(grid, st, u, target);
    let mut delta = vec![0.0; grid.len()];
    let mut trial = u.clone();
    let mut prev_sup = f64::NAN;
    for step in 0..cfg.max_newton {
        if cur.sup < tol {
            return Ok(step);
        }
        let op = LinearizedMa2::new(grid.clone(), &cur.hess);
        let [c1, c2] = op.mean_axis_coefficients();
        let axis = [c1, c1, c2, c2];
        let pc: Box<dyn Preconditioner> = match cfg.preconditioner {
            PreconditionerKind::Spectral if c1 > 0.0 && c2 > 0.0 => {
                Box::new(SpectralLaplace::new(grid, &axis))
            }
            PreconditionerKind::RedBlackGaussSeidel if c1 > 0.0 && c2 > 0.0 => {
                Box::new(RedBlackGs::new(grid, &axis))
            }
            _ => Box::new(SpectralLaplace::new(grid, &[8.0; 4])),
        };
        // forcing term: loose far from the root, tight enough to finish near it
        let mut forcing = cfg.newton_linear_rel_tol;
        if prev_sup.is_finite() {
            forcing = forcing.min(0.9 * (cur.sup / prev_sup).powi(2));
        }
        let forcing = forcing.max(0.1 * tol / cur.sup).min(cfg.newton_linear_rel_tol);
        prev_sup = cur.sup;
        delta.iter_mut().for_each(|v| *v = 0.0);
        let stats = bicgstab(
            &op,
            pc.as_ref(),
            &cur.residual,
            &mut delta,
            forcing,
            cfg.max_linear_iter,
        );
        if !stats.converged && !(stats.rel_residual < 0.5) {
            return Err(SolverError::LinearNonConvergence {
                iterations: stats.iterations,
                rel_residual: stats.rel_residual,
            });
        }

        // an iterate outside the psh cone may get worse only by a slack comparable
        // to the current residual, which shrinks to zero with it; capped so that
        // large early residuals cannot walk into a concave root
        let slack = (10.0 * cur.sup / ma_constant(2)).min(0.1 * cfg.regularization_ladder[0]);
        let guard = (-cfg.psd_guard - eps - slack).min(cur.min_eig - slack);
        let mut s = 1.0;
        loop {
            for &i in grid.interior() {
                trial[i] = u[i] + s * delta[i];
            }
            let next = evaluate2(grid, st, &trial, target);
            let decreased = next.l2 <= (1.0 - 1e-4 * s) * cur.l2 || next.sup < tol;
            if next.min_eig >= guard && decreased {
                std::mem::swap(u, &mut trial);
                cur = next;
                break;
            }
            s *= cfg.damping;
            if s < cfg.min_step {
                return Err(SolverError::Stagnation {
                    residual: cur.sup,
                    regularization: eps,
                    iterations: step,
                    iterate: Box::new(ScalarField::new(grid.clone(), u.clone())?),
                });
            }
        }
    }
    if cur.sup < tol {
        return Ok(cfg.max_newton);
    }
    Err(SolverError::IterationCap {
        residual: cur.sup,
        iterations: cfg.max_newton,
        iterate: Box::new(ScalarField::new(grid.clone(), u.clone())?),
    })
}

/// The discrete maximal function with the given boundary values: the solution
/// of the homogeneous equation `(dd^c f)^n = 0`.
pub fn maximal_extension(
    boundary: &ScalarField,
    cfg: &SolverConfig,
) -> Result<MaSolve, SolverError> {
    let grid = boundary.grid().clone();
    let zero = DensityField::constant(grid, 0.0)?;
    solve_ma_fixed_rhs(&zero, boundary, cfg)
}
