//! JSON run configuration and its translation into solver inputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mongeampere::{
    build_grid, parse_expression, DensityField, Domain, Expression, Grid, Mode, OuterConfig, ProblemSpec,
    RhsFunction, ScalarField, SolverConfig,
};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// An expression given either as a string or as a bare number.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ExprSource {
    Number(f64),
    Text(String),
}

impl ExprSource {
    pub fn text(&self) -> String {
        match self {
            Self::Number(v) => format!("{v:?}"),
            Self::Text(s) => s.clone(),
        }
    }

    /// Parses as a field expression (no `t`).
    pub fn field(&self, what: &str) -> Result<Expression, CliError> {
        Expression::parse_field(&self.text()).map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsConfig {
    /// `F(t, z) = w(z)`.
    Constant { w: ExprSource },
    /// `F(t, z) = e^{κt} w(z)`.
    Exponential { kappa: f64, w: ExprSource },
    /// `F(t, z) = max(t + c, 0)^p w(z)`.
    PowerPlus { p: f64, c: f64, w: ExprSource },
    /// Any expression in `t` and the coordinates.
    Expression { expr: String },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Dump of the solution (`.csv` for CSV, anything else binary).
    pub solution: Option<PathBuf>,
    /// Dump of the maximal extension `f`.
    pub maximal: Option<PathBuf>,
    /// CSV table written by `study`; stdout when absent.
    pub table: Option<PathBuf>,
    /// JSON report list written by `study`; stderr when absent.
    pub report: Option<PathBuf>,
    /// Radial profile CSV (`r,v`).
    pub profile: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Exact solution for convergence studies and radial error reports.
    pub exact: Option<ExprSource>,
    pub resolutions: Vec<usize>,
    pub meshes: Vec<usize>,
    pub perturbations: Vec<f64>,
    /// Bounded perturbation shape; the sine product vanishing on the boundary when absent.
    pub shape: Option<ExprSource>,
    pub c: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            exact: None,
            resolutions: vec![9, 17, 33],
            meshes: vec![64, 128, 256],
            perturbations: (1..=6).map(|j| 0.5f64.powi(j)).collect(),
            shape: None,
            c: mongeampere::verification::DEFAULT_C,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    /// Overrides the default `C h²` tolerance of the subsolution check.
    pub tolerance: Option<f64>,
    pub trials: usize,
    /// Nodes per axis for the randomized comparison suite; the run resolution when absent.
    pub comparison_nodes: Option<usize>,
    pub demailly_u1: ExprSource,
    pub demailly_u2: ExprSource,
    pub epsilons: Vec<f64>,
    pub kappa: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            tolerance: None,
            trials: 100,
            comparison_nodes: None,
            demailly_u1: ExprSource::Text("r2 - 1".into()),
            demailly_u2: ExprSource::Text("2*(r2 - 0.75)".into()),
            epsilons: vec![0.1, 0.05, 0.025],
            kappa: 3.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: usize,
    domain: Option<Domain>,
    resolution: Option<Resolution>,
    radial_mesh: Option<usize>,
    boundary: ExprSource,
    rhs: RhsConfig,
    mu_density: Option<ExprSource>,
    subsolution_seed: Option<ExprSource>,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    solver: Map<String, Value>,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default)]
    outputs: Outputs,
    #[serde(default)]
    study: StudyConfig,
    #[serde(default)]
    checks: ChecksConfig,
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n: usize,
    pub domain: Domain,
    pub resolution: Option<Resolution>,
    pub radial_mesh: usize,
    pub boundary: Expression,
    pub rhs: RhsConfig,
    pub mu_density: Expression,
    pub seed: Option<Expression>,
    pub mode: Mode,
    pub solver: SolverConfig,
    pub outer: OuterConfig,
    pub rng_seed: u64,
    pub outputs: Outputs,
    pub study: StudyConfig,
    pub checks: ChecksConfig,
}

const OUTER_KEYS: [&str; 3] = ["tol_outer", "max_outer", "theta"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if raw.n == 0 {
            return Err(CliError::Config("n must be positive".into()));
        }
        // the solver section carries both the inner and the outer settings
        let (outer, inner): (Map<String, Value>, Map<String, Value>) = raw
            .solver
            .into_iter()
            .partition(|(k, _)| OUTER_KEYS.contains(&k.as_str()));
        let solver: SolverConfig = serde_json::from_value(Value::Object(inner))
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        let outer: OuterConfig = serde_json::from_value(Value::Object(outer))
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        outer.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let domain = raw.domain.unwrap_or_else(|| Domain::centered_box(raw.n));
        domain.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Domain::Box { lo, .. } = &domain {
            if lo.len() != 2 * raw.n {
                return Err(CliError::Config(format!(
                    "box has {} axes but n = {} needs {}",
                    lo.len(),
                    raw.n,
                    2 * raw.n
                )));
            }
        }

        let boundary = raw.boundary.field("boundary")?;
        let mu_density = raw
            .mu_density
            .unwrap_or(ExprSource::Number(1.0))
            .field("mu_density")?;
        let seed = raw
            .subsolution_seed
            .map(|s| s.field("subsolution_seed"))
            .transpose()?;
        let mut exprs = vec![("boundary", &boundary), ("mu_density", &mu_density)];
        if let Some(s) = &seed {
            exprs.push(("subsolution_seed", s));
        }
        let rhs_expr = rhs_expressions(&raw.rhs)?;
        for (what, e) in exprs.iter().copied().chain(rhs_expr.iter().map(|e| ("rhs", e))) {
            if e.max_complex_index() > raw.n {
                return Err(CliError::Config(format!(
                    "{what} '{e}' uses coordinates beyond n = {}",
                    raw.n
                )));
            }
        }
        Ok(Self {
            n: raw.n,
            domain,
            resolution: raw.resolution,
            radial_mesh: raw.radial_mesh.unwrap_or(512),
            boundary,
            rhs: raw.rhs,
            mu_density,
            seed,
            mode: raw.mode,
            solver,
            outer,
            rng_seed: raw.rng_seed,
            outputs: raw.outputs,
            study: raw.study,
            checks: raw.checks,
        })
    }

    pub fn is_ball(&self) -> bool {
        matches!(self.domain, Domain::Ball { .. })
    }

    /// Per-axis resolution, optionally overridden by a uniform node count.
    pub fn grid(&self, nodes: Option<usize>) -> Result<Arc<Grid>, CliError> {
        let dim = 2 * self.n;
        let res = match (nodes, self.resolution.as_ref()) {
            (Some(k), _) | (None, Some(&Resolution::Uniform(k))) => vec![k; dim],
            (None, Some(Resolution::PerAxis(v))) => v.clone(),
            (None, None) => return Err(CliError::Config("resolution is required for box domains".into())),
        };
        Ok(Arc::new(build_grid(&self.domain, &res).map_err(|e| CliError::Config(e.to_string()))?))
    }

    /// Builds the problem instance on a grid; `with_seed` controls whether the
    /// declared seed enters the spec (and thus the hypothesis 3 check).
    pub fn problem_spec(&self, grid: &Arc<Grid>, with_seed: bool) -> Result<ProblemSpec, CliError> {
        let boundary = sample_field(&self.boundary, grid, "boundary")?;
        let mu = sample_density(&self.mu_density, grid, "mu_density")?;
        let rhs = match &self.rhs {
            RhsConfig::Constant { w } => RhsFunction::Constant {
                w: sample_density(&w.field("rhs.w")?, grid, "rhs.w")?,
            },
            RhsConfig::Exponential { kappa, w } => RhsFunction::Exponential {
                kappa: *kappa,
                w: sample_density(&w.field("rhs.w")?, grid, "rhs.w")?,
            },
            RhsConfig::PowerPlus { p, c, w } => RhsFunction::PowerPlus {
                p: *p,
                c: *c,
                w: sample_density(&w.field("rhs.w")?, grid, "rhs.w")?,
            },
            RhsConfig::Expression { expr } => RhsFunction::Expression(
                parse_expression(expr).map_err(|e| CliError::Config(format!("rhs: {e}")))?,
            ),
        };
        let seed = match (&self.seed, with_seed) {
            (Some(s), true) => Some(sample_field(s, grid, "subsolution_seed")?),
            _ => None,
        };
        Ok(ProblemSpec {
            boundary,
            rhs,
            mu,
            seed,
            solver: self.solver.clone(),
            outer: self.outer.clone(),
            mode: self.mode,
        })
    }

    /// `F(t, z) w_μ(z)` at a single point, for the radial backend.
    pub fn point_source(&self) -> Result<impl Fn(f64, &[f64]) -> Result<f64, CliError> + '_, CliError> {
        let weight = rhs_expressions(&self.rhs)?;
        Ok(move |t: f64, coords: &[f64]| {
            let ev = |e: &Expression, t: f64| e.eval(t, coords).map_err(|e| CliError::Config(e.to_string()));
            let mu = ev(&self.mu_density, 0.0)?;
            let f = match &self.rhs {
                RhsConfig::Constant { .. } => ev(&weight[0], 0.0)?,
                RhsConfig::Exponential { kappa, .. } => (kappa * t).exp() * ev(&weight[0], 0.0)?,
                RhsConfig::PowerPlus { p, c, .. } => (t + c).max(0.0).powf(*p) * ev(&weight[0], 0.0)?,
                RhsConfig::Expression { .. } => ev(&weight[0], t)?,
            };
            Ok(f * mu)
        })
    }
}

fn rhs_expressions(rhs: &RhsConfig) -> Result<Vec<Expression>, CliError> {
    Ok(match rhs {
        RhsConfig::Constant { w } | RhsConfig::Exponential { w, .. } | RhsConfig::PowerPlus { w, .. } => {
            vec![w.field("rhs.w")?]
        }
        RhsConfig::Expression { expr } => {
            vec![parse_expression(expr).map_err(|e| CliError::Config(format!("rhs: {e}")))?]
        }
    })
}

pub fn sample_field(e: &Expression, grid: &Arc<Grid>, what: &str) -> Result<ScalarField, CliError> {
    let mut coords = vec![0.0; grid.dim()];
    let values = (0..grid.len())
        .map(|i| {
            grid.coords_into(i, &mut coords);
            e.eval(0.0, &coords)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|err| CliError::Config(format!("{what}: {err}")))?;
    ScalarField::new(grid.clone(), values).map_err(|err| CliError::Config(format!("{what}: {err}")))
}

pub fn sample_density(e: &Expression, grid: &Arc<Grid>, what: &str) -> Result<DensityField, CliError> {
    let f = sample_field(e, grid, what)?;
    let values = grid.interior().iter().map(|&i| f.get(i)).collect();
    DensityField::new(grid.clone(), values).map_err(|err| CliError::Config(format!("{what}: {err}")))
}
