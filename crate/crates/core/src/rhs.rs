//! Right-hand sides `F(t, z)` and the combined nodal source `G(t, z) = F(t, z) w_μ(z)`.

use std::sync::Arc;

use crate::error::{FixedPointError, GridError, HypothesisError};
use crate::expr::Expression;
use crate::grid::{DensityField, Grid, ScalarField};

/// Number of `t` samples per node in the monotonicity spot check.
pub const MONOTONICITY_SAMPLES: usize = 64;

#[derive(Debug, Clone)]
pub enum RhsFunction {
    /// `F(t, z) = w(z)`.
    Constant { w: DensityField },
    /// `F(t, z) = e^{κt} w(z)`.
    Exponential { kappa: f64, w: DensityField },
    /// `F(t, z) = max(t + c, 0)^p w(z)`.
    PowerPlus { p: f64, c: f64, w: DensityField },
    Expression(Expression),
}

impl RhsFunction {
    fn weight(&self) -> Option<&DensityField> {
        match self {
            Self::Constant { w } | Self::Exponential { w, .. } | Self::PowerPlus { w, .. } => Some(w),
            Self::Expression(_) => None,
        }
    }

    /// True when `F` cannot depend on `t`, which makes the map `T` constant.
    pub fn is_t_independent(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Exponential { kappa, .. } => *kappa == 0.0,
            Self::PowerPlus { .. } => false,
            Self::Expression(e) => !e.uses_t(),
        }
    }

    fn validate(&self) -> Result<(), FixedPointError> {
        match self {
            Self::Exponential { kappa, .. } if !(*kappa >= 0.0 && kappa.is_finite()) => Err(
                FixedPointError::Invalid(format!("exponential rate must be finite and >= 0, got {kappa}")),
            ),
            Self::PowerPlus { p, c, .. } if !(*p >= 1.0 && p.is_finite() && c.is_finite()) => Err(
                FixedPointError::Invalid(format!("power family needs finite p >= 1 and finite c, got p = {p}, c = {c}")),
            ),
            _ => Ok(()),
        }
    }
}

/// `G(t, z) = F(t, z) w_μ(z)` on the interior nodes of one grid.
#[derive(Debug, Clone)]
pub struct Source {
    grid: Arc<Grid>,
    f: RhsFunction,
    mu: DensityField,
    // interior coordinates, only kept for expression-defined F
    coords: Option<Vec<f64>>,
}

/// Result of the sampled checks on `t ↦ G(t, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledBounds {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Largest sampled difference quotient of `G` in `t`.
    pub lipschitz: f64,
    /// Largest sampled value of `G`.
    pub max_value: f64,
}

impl Source {
    pub fn new(f: RhsFunction, mu: DensityField) -> Result<Self, FixedPointError> {
        f.validate()?;
        let grid = mu.grid().clone();
        if let Some(w) = f.weight() {
            if !w.grid().same_layout(&grid) {
                return Err(GridError::GridMismatch.into());
            }
        }
        let coords = match &f {
            RhsFunction::Expression(e) => {
                if e.max_complex_index() > grid.n() {
                    return Err(FixedPointError::Invalid(format!(
                        "rhs expression '{e}' references x{0}/y{0} but n = {1}",
                        e.max_complex_index(),
                        grid.n()
                    )));
                }
                let dim = grid.dim();
                let mut out = vec![0.0; grid.interior_len() * dim];
                for (slot, &i) in grid.interior().iter().enumerate() {
                    grid.coords_into(i, &mut out[slot * dim..(slot + 1) * dim]);
                }
                Some(out)
            }
            _ => None,
        };
        Ok(Self {
            grid,
            f,
            mu,
            coords,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rhs(&self) -> &RhsFunction {
        &self.f
    }

    pub fn mu(&self) -> &DensityField {
        &self.mu
    }

    pub fn is_t_independent(&self) -> bool {
        self.f.is_t_independent()
    }

    /// `F(t, z)` at interior slot `slot`.
    pub fn f_value(&self, t: f64, slot: usize) -> Result<f64, FixedPointError> {
        Ok(match &self.f {
            RhsFunction::Constant { w } => w.values()[slot],
            RhsFunction::Exponential { kappa, w } => (kappa * t).exp() * w.values()[slot],
            RhsFunction::PowerPlus { p, c, w } => (t + c).max(0.0).powf(*p) * w.values()[slot],
            RhsFunction::Expression(e) => {
                let dim = self.grid.dim();
                let coords = self.coords.as_ref().expect("expression sources cache coordinates");
                e.eval(t, &coords[slot * dim..(slot + 1) * dim])?
            }
        })
    }

    /// `G(t, z)` at interior slot `slot`.
    pub fn value(&self, t: f64, slot: usize) -> Result<f64, FixedPointError> {
        Ok(self.f_value(t, slot)? * self.mu.values()[slot])
    }

    /// The density `z ↦ G(u(z), z)`.
    pub fn density(&self, u: &ScalarField) -> Result<DensityField, FixedPointError> {
        if !u.grid().same_layout(&self.grid) {
            return Err(GridError::GridMismatch.into());
        }
        let values = self
            .grid
            .interior()
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                let t = u.get(i);
                let g = self.value(t, slot)?;
                if !g.is_finite() {
                    return Err(HypothesisError::NotFinite { node: i, t }.into());
                }
                if g < 0.0 {
                    return Err(HypothesisError::Negative { node: i, t, value: g }.into());
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>, FixedPointError>>()?;
        Ok(DensityField::new(self.grid.clone(), values)?)
    }

    /// Spot-checks that `t ↦ F(t, z)` is finite, nonnegative and nondecreasing at every
    /// node on an even sample of `[t_lo, t_hi]`, and that `G(t, ·)` has a finite integral.
    pub fn check_hypotheses(&self, t_lo: f64, t_hi: f64) -> Result<SampledBounds, FixedPointError> {
        if !(t_lo < t_hi && t_lo.is_finite() && t_hi.is_finite()) {
            return Err(FixedPointError::Invalid(format!(
                "empty monotonicity range [{t_lo}, {t_hi}]"
            )));
        }
        let k = MONOTONICITY_SAMPLES;
        let ts: Vec<f64> = (0..k)
            .map(|j| t_lo + (t_hi - t_lo) * j as f64 / (k - 1) as f64)
            .collect();
        let mut column_sums = vec![0.0; k];
        let mut lipschitz: f64 = 0.0;
        let mut max_value: f64 = 0.0;
        for (slot, &node) in self.grid.interior().iter().enumerate() {
            let mu = self.mu.values()[slot];
            let mut prev = f64::NAN;
            for (j, &t) in ts.iter().enumerate() {
                let f = self.f_value(t, slot)?;
                if !f.is_finite() {
                    return Err(HypothesisError::NotFinite { node, t }.into());
                }
                if f < 0.0 {
                    return Err(HypothesisError::Negative { node, t, value: f }.into());
                }
                if j > 0 {
                    // rounding in e.g. exp(t) must not read as a decrease
                    if f < prev - 1e-12 * prev.abs().max(f.abs()) {
                        return Err(HypothesisError::NotMonotone {
                            node,
                            t0: ts[j - 1],
                            t1: t,
                            f0: prev,
                            f1: f,
                        }
                        .into());
                    }
                    lipschitz = lipschitz.max((f - prev) * mu / (t - ts[j - 1]));
                }
                max_value = max_value.max(f * mu);
                column_sums[j] += f * mu;
                prev = f;
            }
        }
        let vol = self.grid.cell_volume();
        for (j, s) in column_sums.iter().enumerate() {
            if !(s * vol).is_finite() {
                return Err(HypothesisError::NotIntegrable { t: ts[j] }.into());
            }
        }
        Ok(SampledBounds {
            t_lo,
            t_hi,
            lipschitz,
            max_value,
        })
    }

    /// The same source on a sub-grid whose nodes are `parent_nodes` of this grid.
    pub(crate) fn restrict(&self, sub: Arc<Grid>, parent_of: impl Fn(usize) -> usize) -> Result<Self, FixedPointError> {
        let slots: Vec<usize> = sub
            .interior()
            .iter()
            .map(|&i| {
                self.grid
                    .interior_slot(parent_of(i))
                    .expect("sub-box interior lies in the parent interior")
            })
            .collect();
        let pick = |d: &DensityField| {
            DensityField::new(sub.clone(), slots.iter().map(|&s| d.values()[s]).collect())
        };
        let f = match &self.f {
            RhsFunction::Constant { w } => RhsFunction::Constant { w: pick(w)? },
            RhsFunction::Exponential { kappa, w } => RhsFunction::Exponential {
                kappa: *kappa,
                w: pick(w)?,
            },
            RhsFunction::PowerPlus { p, c, w } => RhsFunction::PowerPlus {
                p: *p,
                c: *c,
                w: pick(w)?,
            },
            RhsFunction::Expression(e) => RhsFunction::Expression(e.clone()),
        };
        Self::new(f, pick(&self.mu)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::grid::norm_sq;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::centered(2, 5).unwrap())
    }

    fn ones(g: &Arc<Grid>) -> DensityField {
        DensityField::constant(g.clone(), 1.0).unwrap()
    }

    #[test]
    fn cheng_yau_families_agree() {
        let g = grid();
        let w = DensityField::from_fn(g.clone(), |c| 32.0 * (1.0 - norm_sq(c)).exp()).unwrap();
        let a = Source::new(RhsFunction::Exponential { kappa: 1.0, w }, ones(&g)).unwrap();
        let e = parse_expression("32*exp(1 - r2)*exp(t)").unwrap();
        let b = Source::new(RhsFunction::Expression(e), ones(&g)).unwrap();
        for slot in 0..g.interior_len() {
            for t in [-1.3, -0.2, 0.0] {
                let (x, y) = (a.value(t, slot).unwrap(), b.value(t, slot).unwrap());
                assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
        let bounds = b.check_hypotheses(-2.0, 0.0).unwrap();
        // ∂_t G = G ≤ 32 e at the origin
        assert!(bounds.lipschitz <= 32.0 * std::f64::consts::E);
        assert!(bounds.lipschitz > 30.0);
    }

    #[test]
    fn manufactured_density_is_constant_at_u_star() {
        let g = grid();
        let w = DensityField::from_fn(g.clone(), |c| 32.0 * (1.0 - norm_sq(c)).exp()).unwrap();
        let s = Source::new(RhsFunction::Exponential { kappa: 1.0, w }, ones(&g)).unwrap();
        let u = ScalarField::from_fn(g.clone(), |c| norm_sq(c) - 1.0);
        for v in s.density(&u).unwrap().values() {
            assert!((v - 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decreasing_rhs_names_hypothesis_one() {
        let g = grid();
        let e = parse_expression("exp(-t)").unwrap();
        let s = Source::new(RhsFunction::Expression(e), ones(&g)).unwrap();
        let err = s.check_hypotheses(-1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("rhs not nondecreasing in t"), "{err}");
        assert!(err.to_string().contains("hypothesis 1"));
    }

    #[test]
    fn negative_and_nonfinite_rhs_rejected() {
        let g = grid();
        let s = Source::new(RhsFunction::Expression(parse_expression("t").unwrap()), ones(&g)).unwrap();
        assert!(matches!(
            s.check_hypotheses(-1.0, 0.0),
            Err(FixedPointError::Hypothesis(HypothesisError::Negative { .. }))
        ));
        let s = Source::new(RhsFunction::Expression(parse_expression("1/(t+0.5)^2 + 0*x1").unwrap()), ones(&g))
            .unwrap();
        assert!(s.check_hypotheses(-1.0, 0.0).is_err());
    }

    #[test]
    fn power_family_and_independence() {
        let g = grid();
        let s = Source::new(
            RhsFunction::PowerPlus { p: 2.0, c: 1.0, w: ones(&g) },
            ones(&g),
        )
        .unwrap();
        assert_eq!(s.value(-0.5, 0).unwrap(), 0.25);
        assert_eq!(s.value(-2.0, 0).unwrap(), 0.0);
        assert!(!s.is_t_independent());
        assert!(s.check_hypotheses(-2.0, 0.0).is_ok());
        assert!(RhsFunction::Constant { w: ones(&g) }.is_t_independent());
        assert!(Source::new(RhsFunction::PowerPlus { p: 0.5, c: 0.0, w: ones(&g) }, ones(&g)).is_err());
        let e = parse_expression("x3").unwrap();
        assert!(Source::new(RhsFunction::Expression(e), ones(&g)).is_err());
    }
}
