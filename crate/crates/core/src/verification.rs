//! Numerical checks of the structural inequalities (comparison principle,
//! maximum inequality, stability, uniqueness) and the convergence harnesses.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GridError, VerifyError};
use crate::fixed_point::{solve_mam, solve_mam_from, Problem, ProblemSpec};
use crate::grid::{integrate, norm_sq, pairwise_sum, DensityField, Grid, ScalarField};
use crate::inner::{solve_ma_fixed_rhs, SolverConfig};
use crate::operator::ma_density;
use crate::radial::solve_radial;

/// Default calibration constant of the `C h²` tolerances.
pub const DEFAULT_C: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Signed; the check passes iff it is `>= -tolerance`.
    pub worst_margin: f64,
    /// Coordinates of the worst node or block center.
    pub locus: Option<Vec<f64>>,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: &str, worst_margin: f64, locus: Option<Vec<f64>>, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: worst_margin >= -tolerance,
            worst_margin,
            locus,
            tolerance,
            notes: Vec::new(),
        }
    }
}

fn same_grid(a: &ScalarField, b: &ScalarField) -> Result<(), GridError> {
    if a.grid().same_layout(b.grid()) {
        Ok(())
    } else {
        Err(GridError::GridMismatch)
    }
}

fn boundary_gap(u: &ScalarField, v: &ScalarField) -> f64 {
    let grid = u.grid();
    (0..grid.len())
        .filter(|&i| !grid.is_interior(i))
        .map(|i| (u.get(i) - v.get(i)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ComparisonOptions {
    /// Margin defining the strict set `{u < v - tol_set}`.
    pub tol_set: f64,
    pub c: f64,
    /// Reject pairs whose boundary values differ by more than `boundary_tol`.
    pub require_shared_boundary: bool,
    pub boundary_tol: f64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        let tol_inner = SolverConfig::default().tol_inner;
        Self {
            tol_set: 2.0 * tol_inner,
            c: DEFAULT_C,
            require_shared_boundary: true,
            boundary_tol: 2.0 * tol_inner,
        }
    }
}

/// On `S = {u < v - tol_set}` checks `∫_S (dd^c v)^n <= ∫_S (dd^c u)^n`.
/// The margin is `∫_S ma(u) - ∫_S ma(v)`, the tolerance `C h² |S| cellvol`.
pub fn comparison_check(
    u: &ScalarField,
    v: &ScalarField,
    opts: &ComparisonOptions,
) -> Result<CheckReport, VerifyError> {
    same_grid(u, v)?;
    let gap = boundary_gap(u, v);
    if opts.require_shared_boundary && gap > opts.boundary_tol {
        return Err(VerifyError::BoundaryMismatch(gap));
    }
    let grid = u.grid();
    let mu = ma_density(u).density;
    let mv = ma_density(v).density;
    let mut du = Vec::new();
    let mut dv = Vec::new();
    let mut worst: Option<(usize, f64)> = None;
    for (slot, &i) in grid.interior().iter().enumerate() {
        if u.get(i) < v.get(i) - opts.tol_set {
            let (a, b) = (mu.values()[slot], mv.values()[slot]);
            du.push(a);
            dv.push(b);
            if worst.is_none_or(|(_, w)| b - a > w) {
                worst = Some((i, b - a));
            }
        }
    }
    let vol = grid.cell_volume();
    let h = grid.max_spacing();
    let margin = (pairwise_sum(&du) - pairwise_sum(&dv)) * vol;
    let tolerance = opts.c * h * h * du.len() as f64 * vol;
    let mut report = CheckReport::new("comparison", margin, worst.map(|(i, _)| grid.coords(i)), tolerance);
    if du.is_empty() {
        report.notes.push("strict set is empty".into());
    }
    if gap > opts.boundary_tol {
        report.notes.push(format!("boundary values differ by {gap:e}"));
    }
    Ok(report)
}

/// Randomized ordered-data pairs: for random smooth `G₁ >= G₂ > 0` and a
/// shared random boundary, `comparison_check(T G₁, T G₂)` on the solver outputs.
pub fn comparison_suite(
    n: usize,
    nodes: usize,
    trials: usize,
    rng_seed: u64,
    cfg: &SolverConfig,
) -> Result<Vec<CheckReport>, VerifyError> {
    let grid = Arc::new(Grid::centered(n, nodes)?);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dim = grid.dim();
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let bump = |rng: &mut ChaCha8Rng| {
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let width = rng.gen_range(0.1..0.4);
            let amp = rng.gen_range(0.0..20.0);
            move |c: &[f64]| {
                let d: f64 = c.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
                amp * (-d / (2.0 * width * width)).exp()
            }
        };
        let base = rng.gen_range(1.0..40.0);
        let (b1, b2, b3) = (bump(&mut rng), bump(&mut rng), bump(&mut rng));
        let lift = rng.gen_range(0.0..20.0);
        let g2 = DensityField::from_fn(grid.clone(), |c| base + b1(c) + b2(c))?;
        let g1 = DensityField::from_fn(grid.clone(), |c| base + b1(c) + b2(c) + lift + b3(c))?;
        let (alpha, beta, gamma) = (
            rng.gen_range(0.5..2.0),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        );
        let boundary = ScalarField::from_fn(grid.clone(), |c| {
            alpha * (norm_sq(c) - 1.0) + beta * c[0] + gamma * c[dim - 1]
        });
        let u = solve_ma_fixed_rhs(&g1, &boundary, cfg)?.u;
        let v = solve_ma_fixed_rhs(&g2, &boundary, cfg)?.u;
        let mut report = comparison_check(&u, &v, &ComparisonOptions::default())?;
        report.name = format!("comparison[n={n}, trial {trial}]");
        out.push(report);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DemaillyOptions {
    /// Nodes within `kappa ε` of the crossing set (or next to one) exclude their block.
    pub kappa: f64,
    /// Interior nodes per block side; `None` picks about five blocks per axis.
    pub block: Option<usize>,
    pub c: f64,
}

impl Default for DemaillyOptions {
    fn default() -> Self {
        Self {
            kappa: 3.0,
            block: None,
            c: DEFAULT_C,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DemaillyReport {
    pub report: CheckReport,
    pub epsilon: f64,
    pub blocks_used: usize,
    pub blocks_excluded: usize,
    /// Sum of the margins over the blocks used.
    pub total_margin: f64,
}

/// `ε log(e^{u₁/ε} + e^{u₂/ε})`, evaluated without overflow.
pub fn smoothed_max(u1: &ScalarField, u2: &ScalarField, epsilon: f64) -> ScalarField {
    let values = u1
        .values()
        .iter()
        .zip(u2.values())
        .map(|(&a, &b)| a.max(b) + epsilon * (-(a - b).abs() / epsilon).exp().ln_1p())
        .collect();
    ScalarField::new(u1.grid().clone(), values).expect("finite inputs give finite output")
}

/// Compares `∫ (dd^c m_ε)^n` against `∫ 1_{u₁>=u₂} (dd^c u₁)^n + 1_{u₁<u₂} (dd^c u₂)^n`
/// over blocks of interior nodes clear of the `κε`-neighborhood of `{u₁ = u₂}`.
pub fn demailly_max_check(
    u1: &ScalarField,
    u2: &ScalarField,
    epsilon: f64,
    opts: &DemaillyOptions,
) -> Result<DemaillyReport, VerifyError> {
    same_grid(u1, u2)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(VerifyError::Invalid(format!("smoothing must be positive, got {epsilon}")));
    }
    let grid = u1.grid().clone();
    let h = grid.max_spacing();
    let ma1 = ma_density(u1);
    let ma2 = ma_density(u2);
    let psh_tol = opts.c * h * h;
    for (k, d) in [(1, ma1.psh_defect), (2, ma2.psh_defect)] {
        if d > psh_tol {
            return Err(VerifyError::Invalid(format!(
                "u{k} is not discretely psh: defect {d:e} exceeds {psh_tol:e}"
            )));
        }
    }
    let m = smoothed_max(u1, u2, epsilon);
    let mm = ma_density(&m).density;
    let (d1, d2, dm) = (ma1.density.values(), ma2.density.values(), mm.values());

    let dim = grid.dim();
    let res = grid.resolution();
    let inner: Vec<usize> = res.iter().map(|r| r - 2).collect();
    let block = opts
        .block
        .unwrap_or_else(|| (inner.iter().min().unwrap() / 5).max(2))
        .max(1);
    let counts: Vec<usize> = inner.iter().map(|k| k.div_ceil(block)).collect();
    let nblocks: usize = counts.iter().product();
    let near = |flat: usize| (u1.get(flat) - u2.get(flat)).abs() < opts.kappa * epsilon;

    let vol = grid.cell_volume();
    let scale = 1.0 + ma1.density.max().max(ma2.density.max());
    let mut worst: Option<(f64, Vec<f64>, f64)> = None;
    let mut used = 0;
    let mut margins = Vec::new();
    let mut bidx = vec![0usize; dim];
    let mut idx = vec![0usize; dim];
    'blocks: for b in 0..nblocks {
        let mut rem = b;
        for a in (0..dim).rev() {
            bidx[a] = rem % counts[a];
            rem /= counts[a];
        }
        // node ranges of this block (interior indices start at 1), plus a halo
        let lo: Vec<usize> = (0..dim).map(|a| 1 + bidx[a] * block).collect();
        let hi: Vec<usize> = (0..dim).map(|a| (lo[a] + block).min(res[a] - 1)).collect();
        let halo_total: usize = (0..dim).map(|a| hi[a] - lo[a] + 2).product();
        for k in 0..halo_total {
            let mut rem = k;
            for a in (0..dim).rev() {
                let span = hi[a] - lo[a] + 2;
                idx[a] = lo[a] - 1 + rem % span;
                rem /= span;
            }
            if near(grid.flat_index(&idx)) {
                continue 'blocks;
            }
        }
        let total: usize = (0..dim).map(|a| hi[a] - lo[a]).product();
        let mut sum = 0.0;
        let mut nodes = 0;
        for k in 0..total {
            let mut rem = k;
            for a in (0..dim).rev() {
                let span = hi[a] - lo[a];
                idx[a] = lo[a] + rem % span;
                rem /= span;
            }
            let flat = grid.flat_index(&idx);
            let slot = grid.interior_slot(flat).expect("block nodes are interior");
            let rhs = if u1.get(flat) >= u2.get(flat) { d1[slot] } else { d2[slot] };
            sum += dm[slot] - rhs;
            nodes += 1;
        }
        let margin = sum * vol;
        let tol = opts.c * h * h * scale * nodes as f64 * vol;
        used += 1;
        margins.push(margin);
        if worst.as_ref().is_none_or(|w| margin + tol < w.0 + w.2) {
            let center = (0..dim)
                .map(|a| grid.lo()[a] + 0.5 * (lo[a] + hi[a] - 1) as f64 * grid.spacing()[a])
                .collect();
            worst = Some((margin, center, tol));
        }
    }
    let mut report = match worst {
        Some((margin, center, tol)) => CheckReport::new("demailly", margin, Some(center), tol),
        None => {
            let mut r = CheckReport::new("demailly", 0.0, None, 0.0);
            r.notes.push(format!(
                "every block lies within {}ε of the crossing set; ε = {epsilon} is too large for this grid",
                opts.kappa
            ));
            r
        }
    };
    if used * 10 < nblocks && used > 0 {
        report.notes.push(format!(
            "{used} of {nblocks} blocks are clear of the crossing set at ε = {epsilon}"
        ));
    }
    Ok(DemaillyReport {
        report,
        epsilon,
        blocks_used: used,
        blocks_excluded: nblocks - used,
        total_margin: pairwise_sum(&margins),
    })
}

/// The bounded shape `Π sin(π (x_a - lo_a) / (hi_a - lo_a))`, zero on the boundary.
pub fn sine_product_shape(grid: &Arc<Grid>) -> Result<DensityField, GridError> {
    let (lo, hi) = (grid.lo().to_vec(), grid.hi().to_vec());
    DensityField::from_fn(grid.clone(), |c| {
        c.iter()
            .enumerate()
            .map(|(a, x)| (std::f64::consts::PI * (x - lo[a]) / (hi[a] - lo[a])).sin())
            .product()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// `sup |u_j - u|`.
    pub sup_error: f64,
    /// `∫ |h_j - h|`.
    pub l1_distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub report: CheckReport,
}

/// Perturbs the t-independent density `h` to `h (1 + δ_j s)`, clipped at zero,
/// and measures how far the solutions move. Every perturbed density must stay
/// below `(dd^c v₀)^n` for the problem's seed `v₀`.
pub fn stability_experiment(
    problem: &Problem,
    deltas: &[f64],
    shape: Option<&DensityField>,
    c: f64,
) -> Result<StabilityReport, VerifyError> {
    let spec = problem.spec();
    if !problem.source().is_t_independent() {
        return Err(VerifyError::Invalid(
            "stability experiment needs a right-hand side independent of the solution".into(),
        ));
    }
    let v0 = spec.seed.as_ref().ok_or_else(|| {
        VerifyError::Invalid("stability experiment needs a seed v0 whose measure caps every density".into())
    })?;
    if deltas.is_empty() {
        return Err(VerifyError::Invalid("no perturbations requested".into()));
    }
    let grid = problem.grid().clone();
    let h = problem.source().density(problem.f()).map_err(VerifyError::from)?;
    let cap = ma_density(v0).density;
    let owned;
    let s = match shape {
        Some(s) => s,
        None => {
            owned = sine_product_shape(&grid)?;
            &owned
        }
    };
    if !s.grid().same_layout(&grid) {
        return Err(GridError::GridMismatch.into());
    }
    let cap_slack = 1e-12 * (1.0 + cap.max());
    let perturbed: Vec<Vec<f64>> = deltas
        .iter()
        .map(|&delta| {
            let hj: Vec<f64> = h
                .values()
                .iter()
                .zip(s.values())
                .map(|(a, b)| (a * (1.0 + delta * b)).max(0.0))
                .collect();
            let excess = hj
                .iter()
                .zip(cap.values())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            if excess > cap_slack {
                Err(VerifyError::CapViolated { delta, excess })
            } else {
                Ok(hj)
            }
        })
        .collect::<Result<_, _>>()?;

    let base = solve_ma_fixed_rhs(&h, &spec.boundary, &spec.solver)?.u;
    let vol = grid.cell_volume();
    let mut rows = Vec::with_capacity(deltas.len());
    for (&delta, hj) in deltas.iter().zip(perturbed) {
        let l1: Vec<f64> = hj.iter().zip(h.values()).map(|(a, b)| (a - b).abs()).collect();
        let dj = DensityField::new(grid.clone(), hj)?;
        let uj = solve_ma_fixed_rhs(&dj, &spec.boundary, &spec.solver)?.u;
        rows.push(StabilityRow {
            delta,
            sup_error: uj.sup_distance(&base),
            l1_distance: pairwise_sum(&l1) * vol,
        });
    }
    // margins: 10% monotonicity slack per step, then the terminal bound
    let mut worst = f64::INFINITY;
    for w in rows.windows(2) {
        worst = worst.min(1.1 * w[0].sup_error - w[1].sup_error);
    }
    let last = rows.last().expect("nonempty");
    let bound = 10.0 * spec.solver.tol_inner + c * last.l1_distance;
    worst = worst.min(bound - last.sup_error);
    let mut report = CheckReport::new("stability", worst, None, 0.0);
    report
        .notes
        .push("errors are sup-norm distances on smooth data, stronger than the weak convergence of the lemma".into());
    Ok(StabilityReport { rows, report })
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    /// Largest pairwise sup distance between the limits.
    pub distance: f64,
    pub threshold: f64,
    pub pass: bool,
    pub iterations: Vec<usize>,
    pub notes: Vec<String>,
}

/// Runs the outer iteration from every initial field and compares the limits.
pub fn uniqueness_check(problem: &mut Problem, inits: &[ScalarField]) -> Result<UniquenessReport, VerifyError> {
    if inits.is_empty() {
        return Err(VerifyError::Invalid("no initial fields".into()));
    }
    let slack = 2.0 * problem.spec().solver.tol_inner;
    let mut notes = Vec::new();
    let mut limits = Vec::with_capacity(inits.len());
    let mut iterations = Vec::with_capacity(inits.len());
    for (branch, init) in inits.iter().enumerate() {
        if init.excess_over(problem.f()) > slack
            || problem.phi0().is_some_and(|p| p.excess_over(init) > slack)
        {
            notes.push(format!("initial field {branch} is outside [phi0, f]"));
        }
        let sol = solve_mam_from(problem, init)?;
        if !sol.converged {
            return Err(VerifyError::Inconclusive { branch });
        }
        iterations.push(sol.outer_iters);
        limits.push(sol.u);
    }
    let mut distance = 0.0f64;
    for i in 0..limits.len() {
        for j in i + 1..limits.len() {
            distance = distance.max(limits[i].sup_distance(&limits[j]));
        }
    }
    let spec = problem.spec();
    let threshold = 10.0 * spec.outer.tol_outer.max(spec.solver.tol_inner);
    Ok(UniquenessReport {
        distance,
        threshold,
        pass: distance <= threshold,
        iterations,
        notes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    /// Nodes per axis, or radial cells.
    pub resolution: usize,
    pub h: f64,
    pub sup_error: f64,
    pub l2_error: f64,
    /// Observed order against the previous row; `None` on the first row.
    pub order_sup: Option<f64>,
    pub order_l2: Option<f64>,
    /// Both this row and the previous one are at the solver's noise level.
    pub exact: bool,
    pub converged: bool,
}

impl StudyRow {
    /// Order column as printed: a number, `exact`, or empty.
    pub fn order_label(&self) -> String {
        match (self.exact, self.order_sup) {
            (true, Some(_)) => "exact".into(),
            (_, Some(p)) => format!("{p:.4}"),
            _ => String::new(),
        }
    }
}

fn fill_orders(rows: &mut [StudyRow], noise: f64) {
    for k in 1..rows.len() {
        let (c, f) = (&rows[k - 1], &rows[k]);
        let ratio = (c.h / f.h).ln();
        let order_sup = (c.sup_error / f.sup_error).ln() / ratio;
        let order_l2 = (c.l2_error / f.l2_error).ln() / ratio;
        let exact = c.sup_error <= noise && f.sup_error <= noise;
        rows[k].order_sup = Some(order_sup);
        rows[k].order_l2 = Some(order_l2);
        rows[k].exact = exact;
    }
}

/// Method-of-manufactured-solutions study: for each resolution builds the
/// problem, runs the outer iteration, and measures the error against `exact`.
pub fn convergence_study(
    mut build: impl FnMut(usize) -> Result<ProblemSpec, VerifyError>,
    exact: impl Fn(&[f64]) -> f64,
    resolutions: &[usize],
) -> Result<Vec<StudyRow>, VerifyError> {
    let mut rows = Vec::with_capacity(resolutions.len());
    let mut noise = 0.0f64;
    for &res in resolutions {
        let spec = build(res)?;
        noise = noise.max(10.0 * spec.outer.tol_outer.max(spec.solver.tol_inner));
        let mut problem = Problem::prepare(spec)?;
        let sol = solve_mam(&mut problem)?;
        let grid = problem.grid();
        let reference = ScalarField::from_fn(grid.clone(), &exact);
        let diff: Vec<f64> = grid
            .interior()
            .iter()
            .map(|&i| (sol.u.get(i) - reference.get(i)).powi(2))
            .collect();
        rows.push(StudyRow {
            resolution: res,
            h: grid.max_spacing(),
            sup_error: sol.u.sup_distance(&reference),
            l2_error: (pairwise_sum(&diff) * grid.cell_volume()).sqrt(),
            order_sup: None,
            order_l2: None,
            exact: false,
            converged: sol.converged,
        });
    }
    fill_orders(&mut rows, noise);
    Ok(rows)
}

/// Radial counterpart of [`convergence_study`] over mesh sizes `M`.
pub fn radial_convergence_study(
    n: usize,
    rhs: &dyn Fn(f64, f64) -> f64,
    boundary_value: f64,
    radius: f64,
    exact: impl Fn(f64) -> f64,
    meshes: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<StudyRow>, VerifyError> {
    let mut rows = Vec::with_capacity(meshes.len());
    for &m in meshes {
        let p = solve_radial(n, rhs, boundary_value, radius, m, cfg)?;
        let h = radius / m as f64;
        let sq: Vec<f64> = p
            .mesh
            .iter()
            .zip(&p.values)
            .map(|(r, v)| {
                // radial volume weight r^{2n-1} dr, normalized by the ball volume below
                (v - exact(*r)).powi(2) * r.powi(2 * n as i32 - 1) * h
            })
            .collect();
        let weight = radius.powi(2 * n as i32) / (2 * n) as f64;
        rows.push(StudyRow {
            resolution: m,
            h,
            sup_error: p.sup_error(&exact),
            l2_error: (pairwise_sum(&sq) / weight).sqrt(),
            order_sup: None,
            order_l2: None,
            exact: false,
            converged: true,
        });
    }
    fill_orders(&mut rows, 10.0 * cfg.tol_inner);
    Ok(rows)
}

/// Discrete total Monge-Ampere mass `∫ (dd^c u)^n`.
pub fn total_mass(u: &ScalarField) -> f64 {
    integrate(&ma_density(u).density)
}
