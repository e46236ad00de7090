//! The outer iteration `u_{k+1} = T(u_k)` where `T(u)` solves
//! `(dd^c û)^n = G(u, ·)` with the problem's boundary data, together with the
//! local balayage improvement and the subsolution checker.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FixedPointError, GridError, HypothesisError};
use crate::grid::{build_grid, DensityField, Domain, Grid, ScalarField};
use crate::inner::{maximal_extension, solve_ma_fixed_rhs_from, SolverConfig};
use crate::operator::{ma_density, ma_signed};
use crate::rhs::{RhsFunction, SampledBounds, Source};

/// Whether the data must satisfy the sign conditions of the existence theory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Boundary data must be nonpositive.
    #[default]
    Theorem,
    /// Any continuous boundary data; positive values only produce a warning.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    /// Stop once successive iterates differ by less than this in sup-norm.
    pub tol_outer: f64,
    pub max_outer: usize,
    /// Relaxation `u_{k+1} = (1 - θ) u_k + θ T(u_k)`.
    pub theta: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            tol_outer: 1e-8,
            max_outer: 100,
            theta: 1.0,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<(), FixedPointError> {
        if !(self.tol_outer > 0.0) || self.max_outer == 0 {
            return Err(FixedPointError::Invalid(
                "tol_outer must be positive and max_outer at least 1".into(),
            ));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(FixedPointError::Invalid(format!(
                "relaxation theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// A problem instance as supplied by the user.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    /// Dirichlet data; only boundary nodes are read.
    pub boundary: ScalarField,
    pub rhs: RhsFunction,
    /// Density `w_μ` of the measure against Lebesgue measure.
    pub mu: DensityField,
    /// Optional subsolution `v₀`.
    pub seed: Option<ScalarField>,
    pub solver: SolverConfig,
    pub outer: OuterConfig,
    pub mode: Mode,
}

/// A validated problem with its maximal function `f` computed.
#[derive(Clone, Debug)]
pub struct Problem {
    spec: ProblemSpec,
    source: Source,
    f: ScalarField,
    phi0: Option<ScalarField>,
    bounds: SampledBounds,
    warnings: Vec<String>,
}

impl Problem {
    pub fn prepare(spec: ProblemSpec) -> Result<Self, FixedPointError> {
        spec.solver.validate()?;
        spec.outer.validate()?;
        let grid = spec.boundary.grid().clone();
        let mut warnings = Vec::new();
        let (_, max_boundary) = spec.boundary.boundary_range();
        if max_boundary > 0.0 {
            match spec.mode {
                Mode::Theorem => {
                    return Err(HypothesisError::PositiveBoundary { max: max_boundary }.into())
                }
                Mode::Free => warnings.push(format!(
                    "boundary data reaches {max_boundary}; the existence theory needs it nonpositive"
                )),
            }
        }
        if let Some(seed) = &spec.seed {
            if !seed.grid().same_layout(&grid) {
                return Err(GridError::GridMismatch.into());
            }
        }
        let source = Source::new(spec.rhs.clone(), spec.mu.clone())?;
        if !source.grid().same_layout(&grid) {
            return Err(GridError::GridMismatch.into());
        }

        let f = maximal_extension(&spec.boundary, &spec.solver)?.u;
        let phi0 = spec.seed.as_ref().map(|v0| v0.lincomb(1.0, &f, 1.0));
        let lowest = phi0.as_ref().map_or(f.min(), |p| p.min());
        let bounds = source.check_hypotheses(lowest - 1.0, f.max().max(0.0))?;
        let problem = Self {
            spec,
            source,
            f,
            phi0,
            bounds,
            warnings,
        };
        if let Some(seed) = &problem.spec.seed {
            let report = subsolution_check(seed, &problem, None)?;
            if !report.pass {
                return Err(HypothesisError::SeedNotSubsolution(report.summary()).into());
            }
        }
        Ok(problem)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.spec.boundary.grid()
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    /// The maximal function with the problem's boundary data.
    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    /// `φ₀ = v₀ + f` when a seed was supplied.
    pub fn phi0(&self) -> Option<&ScalarField> {
        self.phi0.as_ref()
    }

    pub fn bounds(&self) -> SampledBounds {
        self.bounds
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `10 max(tol_inner, tol_outer Lip_t G)`.
    pub fn residual_tolerance(&self) -> f64 {
        10.0 * self
            .spec
            .solver
            .tol_inner
            .max(self.spec.outer.tol_outer * self.bounds.lipschitz)
    }

    /// Extends the sampled hypothesis check when an iterate falls below the checked range.
    fn cover(&mut self, u: &ScalarField) -> Result<(), FixedPointError> {
        let lowest = u.min();
        if lowest - 1.0 < self.bounds.t_lo {
            self.bounds = self.source.check_hypotheses(lowest - 1.0, self.bounds.t_hi)?;
        }
        Ok(())
    }

    fn solve_with(&self, u: &ScalarField, start: Option<&ScalarField>) -> Result<Step, FixedPointError> {
        let g = self.source.density(u)?;
        let s = solve_ma_fixed_rhs_from(&g, &self.spec.boundary, &self.spec.solver, start)?;
        Ok(Step {
            u: s.u,
            residual: s.residual,
            psh_defect: s.psh_defect,
            newton_steps: s.newton_steps,
        })
    }
}

struct Step {
    u: ScalarField,
    residual: f64,
    psh_defect: f64,
    newton_steps: usize,
}

/// `u₀ = T(f)`: the solution with right-hand side `G(f, ·)`.
pub fn initial_iterate(problem: &Problem) -> Result<ScalarField, FixedPointError> {
    Ok(problem.solve_with(problem.f(), None)?.u)
}

/// `T(u)`: solves `(dd^c û)^n = G(u, ·)` with the problem's boundary data.
pub fn apply_t(u: &ScalarField, problem: &Problem) -> Result<ScalarField, FixedPointError> {
    Ok(problem.solve_with(u, None)?.u)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterateRecord {
    pub index: usize,
    /// `sup |u_index - u_{index-1}|`.
    pub sup_change: f64,
    pub inner_residual: f64,
    pub psh_defect: f64,
    pub newton_steps: usize,
}

/// Order structure of the alternating iterates.
#[derive(Clone, Debug)]
pub struct ChainRecord {
    /// Largest observed `u_{2k} - u_{2k+2}` (positive means the even chain decreased).
    pub even_violation: f64,
    /// Largest observed `u_{2k+3} - u_{2k+1}`.
    pub odd_violation: f64,
    /// Largest observed `u_{2k} - u_{2k+1}`.
    pub interleave_violation: f64,
    pub slack: f64,
    /// Latest even iterate, a lower bracket.
    pub lower: ScalarField,
    /// Latest odd iterate, an upper bracket.
    pub upper: Option<ScalarField>,
}

impl ChainRecord {
    pub fn even_monotone(&self) -> bool {
        self.even_violation <= self.slack
    }

    pub fn odd_monotone(&self) -> bool {
        self.odd_violation <= self.slack
    }

    pub fn interleaved(&self) -> bool {
        self.interleave_violation <= self.slack
    }

    pub fn ok(&self) -> bool {
        self.even_monotone() && self.odd_monotone() && self.interleaved()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichRecord {
    /// `max(u - f)`.
    pub above_f: f64,
    /// `max(φ₀ - u)` when a seed is present.
    pub below_phi0: Option<f64>,
    pub slack: f64,
}

impl SandwichRecord {
    pub fn ok(&self) -> bool {
        self.above_f <= self.slack && self.below_phi0.is_none_or(|v| v <= self.slack)
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: ScalarField,
    pub converged: bool,
    pub outer_iters: usize,
    pub history: Vec<IterateRecord>,
    /// Present when the iteration is unrelaxed, where the alternating order holds.
    pub chains: Option<ChainRecord>,
    /// `sup |4^n n! det H(u) - G(u, ·)|`.
    pub final_residual: f64,
    pub residual_tolerance: f64,
    pub sandwich: SandwichRecord,
    pub psh_defect: f64,
    pub f: ScalarField,
    pub phi0: Option<ScalarField>,
}

impl Solution {
    pub fn sandwich_ok(&self) -> bool {
        self.sandwich.ok() && self.chains.as_ref().is_none_or(ChainRecord::ok)
    }
}

/// Iterates `T` from `u₀ = T(f)` until successive iterates agree to `tol_outer`.
pub fn solve_mam(problem: &mut Problem) -> Result<Solution, FixedPointError> {
    let first = problem.solve_with(problem.f(), None)?;
    problem.cover(&first.u)?;
    let record = IterateRecord {
        index: 0,
        sup_change: first.u.sup_distance(problem.f()),
        inner_residual: first.residual,
        psh_defect: first.psh_defect,
        newton_steps: first.newton_steps,
    };
    run_from(problem, first.u, Some(record), true)
}

/// Runs the outer loop from an arbitrary starting field. The alternating
/// chain order is only guaranteed from `u₀`, so no chains are recorded here.
pub fn solve_mam_from(problem: &mut Problem, start: &ScalarField) -> Result<Solution, FixedPointError> {
    if !start.grid().same_layout(problem.grid()) {
        return Err(GridError::GridMismatch.into());
    }
    problem.cover(start)?;
    run_from(problem, start.with_boundary_of(&problem.spec.boundary), None, false)
}

fn run_from(
    problem: &mut Problem,
    start: ScalarField,
    first: Option<IterateRecord>,
    track_chains: bool,
) -> Result<Solution, FixedPointError> {
    let out = outer_loop(problem, start, first, track_chains)?;
    let u = out.u;
    let residual_tolerance = problem.residual_tolerance();
    let final_residual = fixed_point_residual(&u, problem.source())?;
    let slack = 2.0 * problem.spec.solver.tol_inner;
    let sandwich = SandwichRecord {
        above_f: u.excess_over(&problem.f),
        below_phi0: problem.phi0.as_ref().map(|p| p.excess_over(&u)),
        slack,
    };
    let psh_defect = ma_density(&u).psh_defect;
    Ok(Solution {
        converged: out.settled && final_residual <= residual_tolerance,
        outer_iters: out.iterations,
        history: out.history,
        chains: out.chains,
        final_residual,
        residual_tolerance,
        sandwich,
        psh_defect,
        f: problem.f.clone(),
        phi0: problem.phi0.clone(),
        u,
    })
}

struct OuterOutcome {
    u: ScalarField,
    settled: bool,
    iterations: usize,
    history: Vec<IterateRecord>,
    chains: Option<ChainRecord>,
}

fn outer_loop(
    problem: &mut Problem,
    start: ScalarField,
    first: Option<IterateRecord>,
    track_chains: bool,
) -> Result<OuterOutcome, FixedPointError> {
    let outer = problem.spec.outer.clone();
    let slack = 2.0 * problem.spec.solver.tol_inner;
    let unrelaxed = outer.theta == 1.0;
    let mut history: Vec<IterateRecord> = first.into_iter().collect();
    let mut chains = (unrelaxed && track_chains).then(|| ChainRecord {
        even_violation: f64::NEG_INFINITY,
        odd_violation: f64::NEG_INFINITY,
        interleave_violation: f64::NEG_INFINITY,
        slack,
        lower: start.clone(),
        upper: None,
    });
    let mut previous: Option<ScalarField> = None;
    let mut current = start;
    let mut settled = false;
    let mut iterations = 0;
    for k in 1..=outer.max_outer {
        // warm starts at a degenerate iterate (such as f itself) can stall Newton
        let step = match problem.solve_with(&current, Some(&current)) {
            Ok(step) => step,
            Err(FixedPointError::Solver(_)) => problem.solve_with(&current, None)?,
            Err(e) => return Err(e),
        };
        let next = if unrelaxed {
            step.u
        } else {
            current.lincomb(1.0 - outer.theta, &step.u, outer.theta)
        };
        problem.cover(&next)?;
        let change = next.sup_distance(&current);
        history.push(IterateRecord {
            index: k,
            sup_change: change,
            inner_residual: step.residual,
            psh_defect: step.psh_defect,
            newton_steps: step.newton_steps,
        });
        if let Some(ch) = chains.as_mut() {
            if k % 2 == 1 {
                // odd iterate: above the even one it was computed from
                ch.interleave_violation = ch.interleave_violation.max(current.excess_over(&next));
                if let Some(prev) = &previous {
                    ch.odd_violation = ch.odd_violation.max(next.excess_over(prev));
                }
                ch.upper = Some(next.clone());
            } else {
                if let Some(prev) = &previous {
                    ch.even_violation = ch.even_violation.max(prev.excess_over(&next));
                }
                ch.lower = next.clone();
            }
        }
        iterations = k;
        previous = Some(std::mem::replace(&mut current, next));
        if change < outer.tol_outer {
            settled = true;
            break;
        }
    }
    Ok(OuterOutcome {
        u: current,
        settled,
        iterations,
        history,
        chains,
    })
}

/// `sup |4^n n! det H(u) - G(u, ·)|` over interior nodes.
pub fn fixed_point_residual(u: &ScalarField, source: &Source) -> Result<f64, FixedPointError> {
    let g = source.density(u)?;
    Ok(ma_signed(u)
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Inclusive node-index ranges of a sub-box of the grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

/// Grid cells a balayage sub-box must keep from the domain boundary.
pub const SUBBOX_MARGIN: usize = 2;

impl SubBox {
    /// The sub-box spanning the middle half of every axis.
    pub fn central_half(grid: &Grid) -> Self {
        let (lo, hi) = grid
            .resolution()
            .iter()
            .map(|&r| {
                let cells = r - 1;
                (cells / 4, cells - cells / 4)
            })
            .unzip();
        Self { lo, hi }
    }

    pub fn validate(&self, grid: &Grid) -> Result<(), GridError> {
        let res = grid.resolution();
        if self.lo.len() != res.len() || self.hi.len() != res.len() {
            return Err(GridError::DimensionMismatch {
                expected: res.len(),
                found: self.lo.len().min(self.hi.len()),
            });
        }
        for (a, ((&lo, &hi), &r)) in self.lo.iter().zip(&self.hi).zip(res).enumerate() {
            if lo < SUBBOX_MARGIN || hi + SUBBOX_MARGIN + 1 > r {
                return Err(GridError::SubBox(format!(
                    "axis {a}: nodes {lo}..={hi} leave fewer than {SUBBOX_MARGIN} cells to the boundary of 0..{r}"
                )));
            }
            if hi < lo || hi - lo + 1 < crate::grid::MIN_RESOLUTION {
                return Err(GridError::SubBox(format!(
                    "axis {a}: nodes {lo}..={hi} span fewer than {} nodes",
                    crate::grid::MIN_RESOLUTION
                )));
            }
        }
        Ok(())
    }

    /// The sub-grid and, for each of its nodes, the parent's flat index.
    pub fn subgrid(&self, grid: &Grid) -> Result<(Arc<Grid>, Vec<usize>), GridError> {
        self.validate(grid)?;
        let dim = grid.dim();
        let node = |a: usize, i: usize| grid.lo()[a] + i as f64 * grid.spacing()[a];
        let domain = Domain::Box {
            lo: (0..dim).map(|a| node(a, self.lo[a])).collect(),
            hi: (0..dim).map(|a| node(a, self.hi[a])).collect(),
        };
        let res: Vec<usize> = (0..dim).map(|a| self.hi[a] - self.lo[a] + 1).collect();
        let sub = Arc::new(build_grid(&domain, &res)?);
        let mut idx = vec![0usize; dim];
        let parent = (0..sub.len())
            .map(|i| {
                sub.multi_index(i, &mut idx);
                for (a, v) in idx.iter_mut().enumerate() {
                    *v += self.lo[a];
                }
                grid.flat_index(&idx)
            })
            .collect();
        Ok((sub, parent))
    }
}

/// Replaces `u` on the sub-box by the solution of the local problem with
/// boundary data `u|∂B`, computed by the same outer iteration started from `u|B`.
pub fn balayage_step(u: &ScalarField, b: &SubBox, problem: &Problem) -> Result<ScalarField, FixedPointError> {
    let grid = problem.grid();
    if !u.grid().same_layout(grid) {
        return Err(GridError::GridMismatch.into());
    }
    let (sub, parent) = b.subgrid(grid)?;
    let local_u = ScalarField::new(sub.clone(), parent.iter().map(|&p| u.get(p)).collect())?;
    let source = problem.source.restrict(sub.clone(), |i| parent[i])?;
    let local_f = ScalarField::new(sub.clone(), parent.iter().map(|&p| problem.f.get(p)).collect())?;
    let mut local = Problem {
        spec: ProblemSpec {
            boundary: local_u.clone(),
            rhs: source.rhs().clone(),
            mu: source.mu().clone(),
            seed: None,
            solver: problem.spec.solver.clone(),
            outer: problem.spec.outer.clone(),
            mode: Mode::Free,
        },
        source,
        f: local_f,
        phi0: None,
        bounds: problem.bounds,
        warnings: Vec::new(),
    };
    let out = outer_loop(&mut local, local_u, None, false)?;
    let mut glued = u.values().to_vec();
    for &i in sub.interior() {
        glued[parent[i]] = out.u.get(i);
    }
    Ok(ScalarField::new(grid.clone(), glued)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsolutionReport {
    /// `min (4^n n! det H(u) - G(u, ·))` over interior nodes.
    pub margin: f64,
    pub margin_locus: Vec<f64>,
    /// `max (u - f)`.
    pub above_f: f64,
    pub psh_defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SubsolutionReport {
    pub fn summary(&self) -> String {
        format!(
            "margin {:e} (tol {:e}), max(u - f) = {:e}, psh defect {:e}",
            self.margin, self.tolerance, self.above_f, self.psh_defect
        )
    }
}

/// Checks `(dd^c u)^n ≥ G(u, ·)`, `u ≤ f` and discrete plurisubharmonicity, each
/// within `tol` (default `10 h² (1 + max G(u, ·))`).
pub fn subsolution_check(
    u: &ScalarField,
    problem: &Problem,
    tol: Option<f64>,
) -> Result<SubsolutionReport, FixedPointError> {
    let grid = problem.grid();
    if !u.grid().same_layout(grid) {
        return Err(GridError::GridMismatch.into());
    }
    let g = problem.source.density(u)?;
    let tolerance = tol.unwrap_or_else(|| {
        let h = grid.max_spacing();
        10.0 * h * h * (1.0 + g.max())
    });
    let ma = ma_signed(u);
    let (slot, margin) = ma
        .iter()
        .zip(g.values())
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
    let margin_locus = grid.coords(grid.interior()[slot]);
    let above_f = u.excess_over(&problem.f);
    let psh_defect = ma_density(u).psh_defect;
    let pass = margin >= -tolerance && above_f <= tolerance && psh_defect <= tolerance;
    Ok(SubsolutionReport {
        margin,
        margin_locus,
        above_f,
        psh_defect,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::grid::norm_sq;

    fn cheng_yau(nodes: usize, seed: bool) -> ProblemSpec {
        let grid = Arc::new(Grid::centered(2, nodes).unwrap());
        let w = DensityField::from_fn(grid.clone(), |c| 32.0 * (1.0 - norm_sq(c)).exp()).unwrap();
        let u_star = ScalarField::from_fn(grid.clone(), |c| norm_sq(c) - 1.0);
        ProblemSpec {
            boundary: u_star.clone(),
            rhs: RhsFunction::Exponential { kappa: 1.0, w },
            mu: DensityField::constant(grid, 1.0).unwrap(),
            seed: seed.then_some(u_star),
            solver: SolverConfig::default(),
            outer: OuterConfig::default(),
            mode: Mode::Theorem,
        }
    }

    fn poisson(nodes: usize, rhs: &str) -> ProblemSpec {
        let grid = Arc::new(Grid::centered(1, nodes).unwrap());
        ProblemSpec {
            boundary: ScalarField::from_fn(grid.clone(), |c| norm_sq(c) - 1.0),
            rhs: RhsFunction::Expression(parse_expression(rhs).unwrap()),
            mu: DensityField::constant(grid, 1.0).unwrap(),
            seed: None,
            solver: SolverConfig::default(),
            outer: OuterConfig::default(),
            mode: Mode::Theorem,
        }
    }

    #[test]
    fn cheng_yau_recovers_manufactured_solution() {
        let mut p = Problem::prepare(cheng_yau(7, true)).unwrap();
        let sol = solve_mam(&mut p).unwrap();
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        assert!(sol.converged, "{:?}", sol.history);
        assert!(sol.u.sup_distance(&u_star) < 1e-6);
        assert!(sol.outer_iters <= 25);
        assert!(sol.sandwich_ok(), "{:?} {:?}", sol.sandwich, sol.chains.as_ref().map(|c| (c.even_violation, c.odd_violation, c.interleave_violation)));
        assert!(sol.final_residual <= sol.residual_tolerance);
    }

    #[test]
    fn outer_loop_from_maximal_extension_reaches_the_same_limit() {
        let mut p = Problem::prepare(cheng_yau(9, true)).unwrap();
        let f = p.f().clone();
        let sol = solve_mam_from(&mut p, &f).unwrap();
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        assert!(sol.converged);
        assert!(sol.chains.is_none());
        assert!(sol.u.sup_distance(&u_star) < 1e-8);
    }

    #[test]
    fn manufactured_fixed_point_of_t() {
        let p = Problem::prepare(cheng_yau(7, false)).unwrap();
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        let t = apply_t(&u_star, &p).unwrap();
        assert!(t.sup_distance(&u_star) < 2e-10);
    }

    #[test]
    fn initial_iterate_below_f_and_u_star() {
        let p = Problem::prepare(cheng_yau(7, false)).unwrap();
        let u0 = initial_iterate(&p).unwrap();
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        assert!(u0.excess_over(p.f()) <= 2e-10);
        assert!(u0.excess_over(&u_star) <= 2e-10);
        // T reverses order: φ₀-like lower input gives the larger output
        let low = apply_t(&u0, &p).unwrap();
        let high = apply_t(p.f(), &p).unwrap();
        assert!(high.excess_over(&low) <= 2e-10);
    }

    #[test]
    fn constant_family_settles_after_one_step() {
        let mut p = Problem::prepare(poisson(9, "4")).unwrap();
        let sol = solve_mam(&mut p).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.outer_iters, 1);
        let exact = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        assert!(sol.u.sup_distance(&exact) < 1e-9);
    }

    #[test]
    fn zero_measure_gives_zero_initial_iterate() {
        let grid = Arc::new(Grid::centered(1, 9).unwrap());
        let spec = ProblemSpec {
            boundary: ScalarField::zeros(grid.clone()),
            rhs: RhsFunction::Exponential {
                kappa: 1.0,
                w: DensityField::constant(grid.clone(), 0.0).unwrap(),
            },
            mu: DensityField::constant(grid, 1.0).unwrap(),
            seed: None,
            solver: SolverConfig::default(),
            outer: OuterConfig::default(),
            mode: Mode::Theorem,
        };
        let p = Problem::prepare(spec).unwrap();
        assert_eq!(initial_iterate(&p).unwrap().max(), 0.0);
        assert_eq!(initial_iterate(&p).unwrap().min(), 0.0);
    }

    #[test]
    fn hypotheses_are_enforced() {
        let err = Problem::prepare(poisson(9, "exp(-t)")).unwrap_err();
        assert!(err.to_string().contains("rhs not nondecreasing in t"), "{err}");

        let mut spec = poisson(9, "4");
        spec.boundary = ScalarField::from_fn(spec.boundary.grid().clone(), |c| norm_sq(c));
        assert!(matches!(
            Problem::prepare(spec.clone()),
            Err(FixedPointError::Hypothesis(HypothesisError::PositiveBoundary { .. }))
        ));
        spec.mode = Mode::Free;
        assert_eq!(Problem::prepare(spec).unwrap().warnings().len(), 1);

        // 0.1(|z|²-1) has density 0.4 < 4
        let mut spec = poisson(9, "4");
        spec.seed = Some(ScalarField::from_fn(spec.boundary.grid().clone(), |c| 0.1 * (norm_sq(c) - 1.0)));
        let err = Problem::prepare(spec).unwrap_err();
        assert!(err.to_string().contains("hypothesis 3"), "{err}");
    }

    #[test]
    fn subsolution_check_cases() {
        let p = Problem::prepare(cheng_yau(7, false)).unwrap();
        let grid = p.grid().clone();
        let u_star = ScalarField::from_fn(grid.clone(), |c| norm_sq(c) - 1.0);
        let r = subsolution_check(&u_star, &p, None).unwrap();
        assert!(r.pass && r.margin.abs() < 1e-9, "{r:?}");
        let r = subsolution_check(p.f(), &p, None).unwrap();
        assert!(!r.pass && r.margin < -1.0);
        // 2(|z|²-1) + f has density at least 32·2² ≥ max G = 32e
        let v = ScalarField::from_fn(grid.clone(), |c| 2.0 * (norm_sq(c) - 1.0)).lincomb(1.0, p.f(), 1.0);
        assert!(subsolution_check(&v, &p, None).unwrap().pass);
    }

    #[test]
    fn balayage_from_seed_improves_towards_solution() {
        let p = Problem::prepare(cheng_yau(9, true)).unwrap();
        let phi0 = p.phi0().unwrap().clone();
        let b = SubBox::central_half(p.grid());
        let psi = balayage_step(&phi0, &b, &p).unwrap();
        assert!(phi0.excess_over(&psi) <= 2e-10);
        let center = p.grid().flat_index(&[4; 4]);
        assert!(psi.get(center) > phi0.get(center) + 1e-3);
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        assert!(psi.excess_over(&u_star) <= 1e-8);
        assert!(subsolution_check(&psi, &p, None).unwrap().pass);
    }

    #[test]
    fn balayage_of_solution_is_identity() {
        let p = Problem::prepare(cheng_yau(9, false)).unwrap();
        let u_star = ScalarField::from_fn(p.grid().clone(), |c| norm_sq(c) - 1.0);
        let psi = balayage_step(&u_star, &SubBox::central_half(p.grid()), &p).unwrap();
        assert!(psi.sup_distance(&u_star) < 2e-10);
    }

    #[test]
    fn subbox_margin_enforced() {
        let grid = Grid::centered(2, 9).unwrap();
        assert!(SubBox { lo: vec![1; 4], hi: vec![6; 4] }.validate(&grid).is_err());
        assert!(SubBox { lo: vec![2; 4], hi: vec![5; 4] }.validate(&grid).is_err());
        assert!(SubBox { lo: vec![2; 4], hi: vec![6; 4] }.validate(&grid).is_ok());
        let (sub, parent) = SubBox { lo: vec![2; 4], hi: vec![6; 4] }.subgrid(&grid).unwrap();
        for (i, &pi) in parent.iter().enumerate() {
            let (a, b) = (sub.coords(i), grid.coords(pi));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        }
    }
}
