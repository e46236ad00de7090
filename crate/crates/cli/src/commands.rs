use std::io::Write;
use std::path::Path;

use mongeampere::dump::{self, DumpFormat};
use mongeampere::verification::{
    comparison_suite, convergence_study, demailly_max_check, radial_convergence_study, stability_experiment,
    uniqueness_check, DemaillyOptions, StudyRow,
};
use mongeampere::{
    initial_iterate, solve_mam, solve_radial, subsolution_check, CheckReport, Domain, Expression, Problem,
    ScalarField, VerifyError,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{sample_density, sample_field, RunConfig};
use crate::error::CliError;

/// What a command prints on stdout and the exit status it asks for.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn json(value: &impl Serialize, code: i32) -> Result<Self, CliError> {
        let stdout = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { stdout, code })
    }
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub outer_iters: usize,
    pub final_residual: f64,
    pub residual_tolerance: f64,
    pub sandwich_ok: bool,
    pub psh_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_error: Option<f64>,
    pub warnings: Vec<String>,
}

fn save(field: &ScalarField, path: &Path) -> Result<(), CliError> {
    dump::save(field, path, DumpFormat::from_path(path))?;
    Ok(())
}

fn require_box(cfg: &RunConfig, cmd: &str) -> Result<(), CliError> {
    if cfg.is_ball() {
        return Err(CliError::Config(format!(
            "`{cmd}` needs a box domain; ball domains are served by `radial`"
        )));
    }
    Ok(())
}

fn prepare(cfg: &RunConfig, with_seed: bool) -> Result<Problem, CliError> {
    let grid = cfg.grid(None)?;
    Ok(Problem::prepare(cfg.problem_spec(&grid, with_seed)?)?)
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    require_box(cfg, "solve")?;
    let mut problem = prepare(cfg, true)?;
    let sol = solve_mam(&mut problem)?;
    if let Some(path) = &cfg.outputs.solution {
        save(&sol.u, path)?;
    }
    if let Some(path) = &cfg.outputs.maximal {
        save(&sol.f, path)?;
    }
    let sup_error = cfg
        .study
        .exact
        .as_ref()
        .map(|e| -> Result<f64, CliError> {
            let exact = sample_field(&e.field("study.exact")?, problem.grid(), "study.exact")?;
            Ok(sol.u.sup_distance(&exact))
        })
        .transpose()?;
    let summary = SolveSummary {
        converged: sol.converged,
        outer_iters: sol.outer_iters,
        final_residual: sol.final_residual,
        residual_tolerance: sol.residual_tolerance,
        sandwich_ok: sol.sandwich_ok(),
        psh_defect: sol.psh_defect,
        sup_error,
        warnings: problem.warnings().to_vec(),
    };
    Outcome::json(&summary, if sol.converged { 0 } else { 3 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    Comparison,
    Subsolution,
    Demailly,
    Uniqueness,
}

pub fn verify(cfg: &RunConfig, checks: &[Check]) -> Result<Outcome, CliError> {
    require_box(cfg, "verify")?;
    let mut reports = Vec::new();
    for check in checks {
        match check {
            Check::Subsolution => reports.push(verify_subsolution(cfg)?),
            Check::Comparison => reports.extend(verify_comparison(cfg)?),
            Check::Demailly => reports.extend(verify_demailly(cfg)?),
            Check::Uniqueness => reports.push(verify_uniqueness(cfg)?),
        }
    }
    let pass = reports.iter().all(|r| r.pass);
    Outcome::json(&json!({ "pass": pass, "checks": reports }), if pass { 0 } else { 1 })
}

fn verify_subsolution(cfg: &RunConfig) -> Result<CheckReport, CliError> {
    let seed = cfg
        .seed
        .as_ref()
        .ok_or_else(|| CliError::Config("the subsolution check needs subsolution_seed".into()))?;
    let problem = prepare(cfg, false)?;
    let u = sample_field(seed, problem.grid(), "subsolution_seed")?;
    let r = subsolution_check(&u, &problem, cfg.checks.tolerance)?;
    let margin = r.margin.min(-r.above_f).min(-r.psh_defect);
    let mut report = CheckReport::new("subsolution", margin, Some(r.margin_locus.clone()), r.tolerance);
    report.notes.push(r.summary());
    Ok(report)
}

fn verify_comparison(cfg: &RunConfig) -> Result<Vec<CheckReport>, CliError> {
    let nodes = match (cfg.checks.comparison_nodes, cfg.resolution.as_ref()) {
        (Some(k), _) | (None, Some(&crate::config::Resolution::Uniform(k))) => k,
        _ => 9,
    };
    let trials = comparison_suite(cfg.n, nodes, cfg.checks.trials, cfg.rng_seed, &cfg.solver)?;
    let failures: Vec<CheckReport> = trials.iter().filter(|r| !r.pass).cloned().collect();
    let (worst, tol) = trials
        .iter()
        .map(|r| (r.worst_margin + r.tolerance, r.tolerance))
        .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc });
    let mut summary = CheckReport::new(&format!("comparison[n={}]", cfg.n), worst - tol, None, tol);
    summary.pass = failures.is_empty();
    summary.notes.push(format!(
        "{} of {} randomized pairs passed",
        trials.len() - failures.len(),
        trials.len()
    ));
    let mut out = vec![summary];
    out.extend(failures);
    Ok(out)
}

fn verify_demailly(cfg: &RunConfig) -> Result<Vec<CheckReport>, CliError> {
    let grid = cfg.grid(None)?;
    let u1 = sample_field(&cfg.checks.demailly_u1.field("checks.demailly_u1")?, &grid, "checks.demailly_u1")?;
    let u2 = sample_field(&cfg.checks.demailly_u2.field("checks.demailly_u2")?, &grid, "checks.demailly_u2")?;
    let opts = DemaillyOptions {
        kappa: cfg.checks.kappa,
        ..DemaillyOptions::default()
    };
    if cfg.checks.epsilons.is_empty() {
        return Err(CliError::Config("checks.epsilons is empty".into()));
    }
    cfg.checks
        .epsilons
        .iter()
        .map(|&eps| {
            let r = demailly_max_check(&u1, &u2, eps, &opts)?;
            let mut report = r.report;
            report.name = format!("demailly[eps={eps}]");
            report.notes.push(format!(
                "{} blocks used, {} excluded, total margin {:e}",
                r.blocks_used, r.blocks_excluded, r.total_margin
            ));
            Ok(report)
        })
        .collect()
}

fn verify_uniqueness(cfg: &RunConfig) -> Result<CheckReport, CliError> {
    let mut problem = prepare(cfg, true)?;
    let u0 = initial_iterate(&problem)?;
    let f = problem.f().clone();
    let mut inits = vec![u0.clone(), f.clone(), u0.lincomb(0.5, &f, 0.5)];
    if let Some(p) = problem.phi0() {
        inits.push(p.clone());
    }
    let r = uniqueness_check(&mut problem, &inits)?;
    let mut report = CheckReport::new("uniqueness", -r.distance, None, r.threshold);
    report.notes.push(format!(
        "{} initializations, outer iterations {:?}, largest distance {:e}",
        inits.len(),
        r.iterations,
        r.distance
    ));
    report.notes.extend(r.notes);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Convergence,
    Stability,
}

fn write_table(cfg: &RunConfig, header: &[&str], rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    match &cfg.outputs.table {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn write_report(cfg: &RunConfig, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    match &cfg.outputs.report {
        Some(path) => std::fs::write(path, text)?,
        None => writeln!(std::io::stderr(), "{text}")?,
    }
    Ok(())
}

fn study_rows(rows: &[StudyRow]) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    rows.iter()
        .map(|r| {
            vec![
                r.resolution.to_string(),
                format!("{:e}", r.h),
                format!("{:e}", r.sup_error),
                format!("{:e}", r.l2_error),
                r.order_label(),
                opt(r.order_l2),
                r.converged.to_string(),
            ]
        })
        .collect()
}

pub fn study(cfg: &RunConfig, kind: Study) -> Result<Outcome, CliError> {
    match kind {
        Study::Convergence => study_convergence(cfg),
        Study::Stability => study_stability(cfg),
    }
}

fn study_convergence(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let exact = cfg
        .study
        .exact
        .as_ref()
        .ok_or_else(|| CliError::Config("a convergence study needs study.exact".into()))?
        .field("study.exact")?;
    let rows = if let Domain::Ball { radius } = cfg.domain {
        let source = cfg.point_source()?;
        let n = cfg.n;
        let point = |r: f64| radial_point(n, r);
        let bv = cfg
            .boundary
            .eval(0.0, &point(radius))
            .map_err(|e| CliError::Config(format!("boundary: {e}")))?;
        let rhs = |v: f64, r: f64| source(v, &point(r)).unwrap_or(f64::NAN);
        let exact = |r: f64| exact.eval(0.0, &point(r)).unwrap_or(f64::NAN);
        radial_convergence_study(n, &rhs, bv, radius, exact, &cfg.study.meshes, &cfg.solver)?
    } else {
        let eval = |c: &[f64]| exact.eval(0.0, c).unwrap_or(f64::NAN);
        convergence_study(
            |res| {
                let grid = cfg.grid(Some(res)).map_err(|e| VerifyError::Invalid(e.to_string()))?;
                cfg.problem_spec(&grid, true)
                    .map_err(|e| VerifyError::Invalid(e.to_string()))
            },
            eval,
            &cfg.study.resolutions,
        )?
    };
    write_report(cfg, &serde_json::to_value(&rows).expect("rows serialize"))?;
    let stdout = write_table(
        cfg,
        &["resolution", "h", "sup_error", "l2_error", "order_sup", "order_l2", "converged"],
        study_rows(&rows),
    )?;
    let code = if rows.iter().all(|r| r.converged) { 0 } else { 3 };
    Ok(Outcome { stdout, code })
}

fn study_stability(cfg: &RunConfig) -> Result<Outcome, CliError> {
    require_box(cfg, "study stability")?;
    let problem = prepare(cfg, true)?;
    let shape = cfg
        .study
        .shape
        .as_ref()
        .map(|s| sample_density(&s.field("study.shape")?, problem.grid(), "study.shape"))
        .transpose()?;
    let r = stability_experiment(&problem, &cfg.study.perturbations, shape.as_ref(), cfg.study.c)?;
    write_report(cfg, &serde_json::to_value(&r.report).expect("report serializes"))?;
    let rows = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.delta.to_string(),
                format!("{:e}", row.sup_error),
                format!("{:e}", row.l1_distance),
            ]
        })
        .collect();
    let stdout = write_table(cfg, &["delta", "sup_error", "l1_distance"], rows)?;
    Ok(Outcome {
        stdout,
        code: if r.report.pass { 0 } else { 1 },
    })
}

fn radial_point(n: usize, r: f64) -> Vec<f64> {
    let mut c = vec![0.0; 2 * n];
    c[0] = r;
    c
}

#[derive(Debug, Serialize)]
struct RadialSummary {
    n: usize,
    radius: f64,
    mesh_size: usize,
    residual: f64,
    newton_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sup_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decreasing_at: Option<f64>,
}

pub fn radial(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let Domain::Ball { radius } = cfg.domain else {
        return Err(CliError::Config("`radial` needs a ball domain".into()));
    };
    let n = cfg.n;
    let source = cfg.point_source()?;
    let point = |r: f64| radial_point(n, r);
    let bv = cfg
        .boundary
        .eval(0.0, &point(radius))
        .map_err(|e| CliError::Config(format!("boundary: {e}")))?;
    let rhs = |v: f64, r: f64| source(v, &point(r)).unwrap_or(f64::NAN);
    let profile = solve_radial(n, &rhs, bv, radius, cfg.radial_mesh, &cfg.solver)?;
    let sup_error = match &cfg.study.exact {
        Some(e) => {
            let exact: Expression = e.field("study.exact")?;
            Some(profile.sup_error(|r| exact.eval(0.0, &point(r)).unwrap_or(f64::NAN)))
        }
        None => None,
    };
    if let Some(path) = &cfg.outputs.profile {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "v"])?;
        for (r, v) in profile.mesh.iter().zip(&profile.values) {
            w.write_record([r.to_string(), v.to_string()])?;
        }
        w.flush()?;
    }
    let summary = RadialSummary {
        n,
        radius,
        mesh_size: profile.mesh_size(),
        residual: profile.residual,
        newton_steps: profile.newton_steps,
        sup_error,
        decreasing_at: profile.decreasing_at,
    };
    Outcome::json(&summary, 0)
}

/// Sets the global thread pool size from `MONGEAMPERE_THREADS`, if present.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MONGEAMPERE_THREADS") else {
        return Ok(());
    };
    let k: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("MONGEAMPERE_THREADS must be a positive integer, got '{v}'")))?;
    if k == 0 {
        return Err(CliError::Config("MONGEAMPERE_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}
