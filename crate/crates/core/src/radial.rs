//! Radial backend on a ball of radius `R`: for `u(z) = v(|z|)` the operator
//! reduces to `n! (v'' + v'/r) (2v'/r)^(n-1)`, an ODE boundary value problem
//! in `r` with `v'(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::inner::SolverConfig;

pub const MIN_RADIAL_MESH: usize = 32;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialProfile {
    pub n: usize,
    pub radius: f64,
    /// `r_i = i R / M`, `i = 0..=M`.
    pub mesh: Vec<f64>,
    pub values: Vec<f64>,
    pub residual: f64,
    pub newton_steps: usize,
    /// Smallest radius with a negative centered slope, if any.
    pub decreasing_at: Option<f64>,
}

impl RadialProfile {
    pub fn mesh_size(&self) -> usize {
        self.mesh.len() - 1
    }

    /// Sup distance to `exact` over the mesh.
    pub fn sup_error(&self, exact: impl Fn(f64) -> f64) -> f64 {
        self.mesh
            .iter()
            .zip(&self.values)
            .map(|(r, v)| (v - exact(*r)).abs())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation of the profile at radius `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let m = self.mesh_size();
        let h = self.radius / m as f64;
        let x = (r.abs() / h).min(m as f64);
        let i = (x.floor() as usize).min(m - 1);
        let w = x - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Discrete operator at node `i` and its partial derivatives with respect to
/// `v_{i-1}`, `v_i`, `v_{i+1}`.
fn radial_op(n: usize, v: &[f64], i: usize, h: f64) -> (f64, [f64; 3]) {
    let nf = factorial(n);
    let nn = n as i32;
    if i == 0 {
        // ghost node v_{-1} = v_1; v'/r -> v''(0), so the operator is n! (2 v'')^n
        let d2 = 2.0 * (v[1] - v[0]) / (h * h);
        let val = nf * (2.0 * d2).powi(nn);
        let dval = nf * nn as f64 * (2.0 * d2).powi(nn - 1) * 2.0;
        let dd = 2.0 / (h * h);
        return (val, [0.0, -dval * dd, dval * dd]);
    }
    let r = i as f64 * h;
    let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
    let d1 = (v[i + 1] - v[i - 1]) / (2.0 * h);
    let a = d2 + d1 / r;
    let b = 2.0 * d1 / r;
    let bp = b.powi(nn - 1);
    let val = nf * a * bp;
    // partials of a and b with respect to the three stencil values
    let da = [1.0 / (h * h) - 1.0 / (2.0 * h * r), -2.0 / (h * h), 1.0 / (h * h) + 1.0 / (2.0 * h * r)];
    let db = [-1.0 / (h * r), 0.0, 1.0 / (h * r)];
    let dbp = if n > 1 { (nn - 1) as f64 * b.powi(nn - 2) } else { 0.0 };
    let mut jac = [0.0; 3];
    for k in 0..3 {
        jac[k] = nf * (da[k] * bp + a * dbp * db[k]);
    }
    (val, jac)
}

struct RadialEval {
    residual: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    sup: f64,
    l2: f64,
    elliptic: bool,
}

fn evaluate(
    n: usize,
    v: &[f64],
    h: f64,
    rhs: &dyn Fn(f64, f64) -> f64,
    eps: f64,
) -> Result<RadialEval, SolverError> {
    let m = v.len() - 1;
    let mut e = RadialEval {
        residual: vec![0.0; m],
        lower: vec![0.0; m],
        diag: vec![0.0; m],
        upper: vec![0.0; m],
        sup: 0.0,
        l2: 0.0,
        elliptic: true,
    };
    for i in 0..m {
        let r = i as f64 * h;
        let g = rhs(v[i], r);
        if !(g >= 0.0) || !g.is_finite() {
            return Err(SolverError::NegativeRhs {
                value: g,
                location: format!("r = {r}, v = {}", v[i]),
            });
        }
        let step = 1e-7 * (1.0 + v[i].abs());
        let dg = (rhs(v[i] + step, r) - rhs(v[i] - step, r)) / (2.0 * step);
        let (val, jac) = radial_op(n, v, i, h);
        let res = val - g - eps;
        e.residual[i] = res;
        e.sup = e.sup.max(res.abs());
        e.l2 += res * res;
        e.lower[i] = jac[0];
        e.diag[i] = jac[1] - if dg.is_finite() { dg } else { 0.0 };
        e.upper[i] = jac[2];
        if i > 0 {
            let d1 = v[i + 1] - v[i - 1];
            let d2 = v[i + 1] - 2.0 * v[i] + v[i - 1];
            e.elliptic &= d1 >= 0.0 && d2 * r + 0.5 * h * d1 >= 0.0;
        } else {
            e.elliptic &= v[1] >= v[0];
        }
    }
    e.l2 = e.l2.sqrt();
    Ok(e)
}

/// Thomas algorithm; `upper[m-1]` is ignored (it couples to the fixed
/// boundary value).
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        c[i] = if i + 1 < m { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..m - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Solves `n! (v'' + v'/r) (2v'/r)^(n-1) = rhs(v, r)` on `[0, R]` with
/// `v'(0) = 0` and `v(R) = boundary_value`, by damped Newton on a uniform
/// mesh of `mesh_size` cells. `rhs` may depend on `v`; its `v`-derivative is
/// taken numerically.
pub fn solve_radial(
    n: usize,
    rhs: &dyn Fn(f64, f64) -> f64,
    boundary_value: f64,
    radius: f64,
    mesh_size: usize,
    cfg: &SolverConfig,
) -> Result<RadialProfile, SolverError> {
    cfg.validate()?;
    if n == 0 {
        return Err(SolverError::Config("n must be positive".into()));
    }
    if mesh_size < MIN_RADIAL_MESH {
        return Err(SolverError::Config(format!(
            "radial mesh needs at least {MIN_RADIAL_MESH} cells, got {mesh_size}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(crate::error::GridError::InvalidRadius(radius).into());
    }
    if !boundary_value.is_finite() {
        return Err(SolverError::Config("boundary value must be finite".into()));
    }
    let m = mesh_size;
    let h = radius / m as f64;
    let mesh: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();

    let g_min = mesh
        .iter()
        .map(|&r| rhs(boundary_value, r))
        .fold(f64::INFINITY, f64::min);
    let ladder: Vec<f64> = if g_min < cfg.regularization_ladder[0] {
        cfg.regularization_ladder.clone()
    } else {
        vec![0.0]
    };

    // v = λ(r² - R²) + boundary has constant operator n! (4λ)^n
    let g_mean = mesh.iter().map(|&r| rhs(boundary_value, r)).sum::<f64>() / (m + 1) as f64;
    let lambda = ((g_mean + ladder[0]) / factorial(n)).powf(1.0 / n as f64) / 4.0;
    let mut v: Vec<f64> = mesh
        .iter()
        .map(|&r| boundary_value + lambda * (r * r - radius * radius))
        .collect();

    let scale = mesh
        .iter()
        .map(|&r| rhs(boundary_value, r).abs())
        .fold(1.0, f64::max);
    let mut total = 0;
    let mut residual = f64::INFINITY;
    for (k, &eps) in ladder.iter().enumerate() {
        let last = k + 1 == ladder.len();
        let tol = if last {
            cfg.tol_inner * scale
        } else {
            (cfg.tol_inner * scale).max(0.1 * eps)
        };
        let mut cur = evaluate(n, &v, h, rhs, eps)?;
        let mut converged = false;
        for _ in 0..cfg.max_newton {
            if cur.sup < tol {
                converged = true;
                break;
            }
            total += 1;
            let Some(delta) = solve_tridiagonal(&cur.lower, &cur.diag, &cur.upper, &cur.residual)
            else {
                break;
            };
            let mut s = 1.0;
            let mut accepted = false;
            while s >= cfg.min_step {
                let trial: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if i < m { x - s * delta[i] } else { *x })
                    .collect();
                let next = evaluate(n, &trial, h, rhs, eps)?;
                let ok_shape = next.elliptic || !cur.elliptic;
                if ok_shape && (next.l2 <= (1.0 - 1e-4 * s) * cur.l2 || next.sup < tol) {
                    v = trial;
                    cur = next;
                    accepted = true;
                    break;
                }
                s *= cfg.damping;
            }
            if !accepted {
                // rounding floor: the update no longer changes the iterate
                if delta.iter().all(|d| d.abs() <= 1e-13 * (1.0 + v[0].abs())) && last {
                    converged = cur.sup < 1e3 * tol;
                }
                break;
            }
        }
        converged |= cur.sup < tol;
        residual = cur.sup;
        if !converged {
            return Err(SolverError::RadialFailure {
                residual,
                iterations: total,
            });
        }
    }

    let decreasing_at = (1..m)
        .find(|&i| v[i + 1] - v[i - 1] < -1e-12 * (1.0 + v[i].abs()))
        .map(|i| mesh[i]);
    Ok(RadialProfile {
        n,
        radius,
        mesh,
        values: v,
        residual,
        newton_steps: total,
        decreasing_at,
    })
}
