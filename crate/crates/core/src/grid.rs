//! Domains, structured grids over R^{2n}, and the nodal fields that live on them.
//!
//! Axes are ordered `x1, y1, x2, y2, ..., xn, yn`, so complex coordinate `j`
//! owns real axes `2j` and `2j + 1`. Storage is lexicographic with the last
//! axis contiguous.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::GridError;

/// Smallest admissible node count per axis. Central and mixed stencils reach
/// one node in every direction, and the interior must itself hold a 3-point
/// block for the mixed stencils to be meaningful.
pub const MIN_RESOLUTION: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// Axis-aligned box with one `(lo, hi)` pair per real coordinate.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Ball of the given radius centered at the origin. Only the radial
    /// backend accepts it.
    Ball { radius: f64 },
}

impl Domain {
    /// The default box `[-1/2, 1/2]^{2n}`, which sits inside the closed unit ball.
    pub fn centered_box(n: usize) -> Self {
        Domain::Box {
            lo: vec![-0.5; 2 * n],
            hi: vec![0.5; 2 * n],
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        match self {
            Domain::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.len() % 2 != 0 {
                    return Err(GridError::DimensionMismatch {
                        expected: 2 * lo.len().max(1).div_ceil(2),
                        found: hi.len(),
                    });
                }
                for (axis, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                    if !(l.is_finite() && h.is_finite()) || l >= h {
                        return Err(GridError::DegenerateBox { axis, lo: l, hi: h });
                    }
                }
                Ok(())
            }
            Domain::Ball { radius } => {
                if radius.is_finite() && *radius > 0.0 {
                    Ok(())
                } else {
                    Err(GridError::InvalidRadius(*radius))
                }
            }
        }
    }
}

/// Structured tensor grid over a box in R^{2n}.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    interior: Vec<usize>,
    // position of a node in `interior`, or usize::MAX for boundary nodes
    interior_slot: Vec<usize>,
}

/// Builds the grid for a box domain. `resolution` lists nodes per real axis.
pub fn build_grid(domain: &Domain, resolution: &[usize]) -> Result<Grid, GridError> {
    let (lo, hi) = match domain {
        Domain::Box { lo, hi } => (lo, hi),
        Domain::Ball { .. } => return Err(GridError::BallNotGridable),
    };
    domain.validate()?;
    if resolution.len() != lo.len() {
        return Err(GridError::DimensionMismatch {
            expected: lo.len(),
            found: resolution.len(),
        });
    }
    if let Some((axis, &r)) = resolution
        .iter()
        .enumerate()
        .find(|(_, &r)| r < MIN_RESOLUTION)
    {
        return Err(GridError::ResolutionTooSmall {
            axis,
            found: r,
            min: MIN_RESOLUTION,
        });
    }
    let dim = lo.len();
    let spacing: Vec<f64> = (0..dim)
        .map(|a| (hi[a] - lo[a]) / (resolution[a] - 1) as f64)
        .collect();
    let mut strides = vec![1usize; dim];
    for a in (0..dim.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * resolution[a + 1];
    }
    let len = resolution.iter().product();

    let mut interior = Vec::new();
    let mut interior_slot = vec![usize::MAX; len];
    let mut index = vec![0usize; dim];
    for flat in 0..len {
        if index
            .iter()
            .zip(resolution)
            .all(|(&i, &r)| i > 0 && i + 1 < r)
        {
            interior_slot[flat] = interior.len();
            interior.push(flat);
        }
        // odometer increment, last axis fastest
        for a in (0..dim).rev() {
            index[a] += 1;
            if index[a] < resolution[a] {
                break;
            }
            index[a] = 0;
        }
    }

    Ok(Grid {
        n: dim / 2,
        lo: lo.clone(),
        hi: hi.clone(),
        resolution: resolution.to_vec(),
        spacing,
        strides,
        len,
        interior,
        interior_slot,
    })
}

impl Grid {
    /// Uniform grid on `[-1/2, 1/2]^{2n}` with `nodes` points per axis.
    pub fn centered(n: usize, nodes: usize) -> Result<Self, GridError> {
        build_grid(&Domain::centered_box(n), &vec![nodes; 2 * n])
    }

    /// Complex dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of real axes, `2n`.
    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat indices of interior nodes, in storage order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        self.interior_slot[flat] != usize::MAX
    }

    /// Position of `flat` in [`Grid::interior`], if it is an interior node.
    pub fn interior_slot(&self, flat: usize) -> Option<usize> {
        let s = self.interior_slot[flat];
        (s != usize::MAX).then_some(s)
    }

    /// Volume of one grid cell, `prod h`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for a in 0..self.dim() {
            out[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of node `flat`, written into `out` (length `2n`).
    pub fn coords_into(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            // the last node is pinned to `hi` so dumps determine the grid exactly
            out[a] = if i + 1 == self.resolution[a] {
                self.hi[a]
            } else {
                self.lo[a] + i as f64 * self.spacing[a]
            };
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(flat, &mut out);
        out
    }

    /// Same node layout and geometry (up to bit-identical metadata).
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.resolution == other.resolution && self.lo == other.lo && self.hi == other.hi
    }
}

/// `|z|^2` at a coordinate vector.
pub fn norm_sq(coords: &[f64]) -> f64 {
    coords.iter().map(|c| c * c).sum()
}

/// One real value per grid node.
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at every node. Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut coords = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|flat| {
                grid.coords_into(flat, &mut coords);
                f(&coords)
            })
            .collect();
        Self::new(grid, values).expect("sampled function must be finite")
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest and smallest value over boundary nodes.
    pub fn boundary_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (flat, &v) in self.values.iter().enumerate() {
            if !self.grid.is_interior(flat) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Copy of `self` whose boundary nodes carry `boundary`'s values.
    pub fn with_boundary_of(&self, boundary: &ScalarField) -> Self {
        let mut out = self.clone();
        for flat in 0..self.grid.len() {
            if !self.grid.is_interior(flat) {
                out.values[flat] = boundary.values[flat];
            }
        }
        out
    }

    /// Nodewise `a*self + b*other`.
    pub fn lincomb(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max(self - other)` over all nodes; `<= slack` means `self <= other + slack`.
    pub fn excess_over(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// An `n x n` complex Hermitian matrix per interior node.
#[derive(Clone)]
pub struct HermitianField {
    grid: Arc<Grid>,
    n: usize,
    data: Vec<Complex64>,
}

impl HermitianField {
    /// Builds a field from per-node upper triangles; `upper(slot, j, k)` is
    /// queried for `j <= k` only and the lower triangle is mirrored.
    pub(crate) fn from_upper(
        grid: Arc<Grid>,
        mut upper: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let n = grid.n();
        let m = grid.interior_len();
        let mut data = vec![Complex64::new(0.0, 0.0); m * n * n];
        for slot in 0..m {
            let block = &mut data[slot * n * n..(slot + 1) * n * n];
            for j in 0..n {
                for k in j..n {
                    let v = upper(slot, j, k);
                    if j == k {
                        block[j * n + j] = Complex64::new(v.re, 0.0);
                    } else {
                        block[j * n + k] = v;
                        block[k * n + j] = v.conj();
                    }
                }
            }
        }
        Self { grid, n, data }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Matrix at interior slot `slot`, row-major.
    pub fn at(&self, slot: usize) -> &[Complex64] {
        &self.data[slot * self.n * self.n..(slot + 1) * self.n * self.n]
    }

    pub fn entry(&self, slot: usize, j: usize, k: usize) -> Complex64 {
        self.at(slot)[j * self.n + k]
    }
}

/// One nonnegative real per interior node.
#[derive(Clone)]
pub struct DensityField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.interior_len() {
            return Err(GridError::LengthMismatch {
                expected: grid.interior_len(),
                found: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node });
        }
        if let Some(node) = values.iter().position(|&v| v < 0.0) {
            return Err(GridError::NegativeDensity {
                node,
                value: values[node],
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Result<Self, GridError> {
        let m = grid.interior_len();
        Self::new(grid, vec![value; m])
    }

    /// Samples `f` at every interior node.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self, GridError> {
        let mut coords = vec![0.0; grid.dim()];
        let values = grid
            .interior()
            .iter()
            .map(|&flat| {
                grid.coords_into(flat, &mut coords);
                f(&coords)
            })
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Pairwise (cascade) summation; the result does not depend on anything but
/// the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 128;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Discrete integral of a density: sum of nodal values times the cell volume.
pub fn integrate(d: &DensityField) -> f64 {
    pairwise_sum(&d.values) * d.grid.cell_volume()
}

// summaries only: a field has up to millions of values
impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("resolution", &self.resolution)
            .finish()
    }
}

fn summarize(f: &mut fmt::Formatter<'_>, name: &str, grid: &Grid, values: &[f64]) -> fmt::Result {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    f.debug_struct(name)
        .field("grid", grid)
        .field("len", &values.len())
        .field("min", &lo)
        .field("max", &hi)
        .finish()
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        summarize(f, "ScalarField", &self.grid, &self.values)
    }
}

impl fmt::Debug for DensityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        summarize(f, "DensityField", &self.grid, &self.values)
    }
}

impl fmt::Debug for HermitianField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianField")
            .field("grid", &self.grid)
            .field("n", &self.n)
            .field("nodes", &self.grid.interior_len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_box_counts() {
        let g = build_grid(&Domain::centered_box(1), &[5, 5]).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.interior_len(), 9);
        assert_eq!(g.spacing(), &[0.25, 0.25]);
    }

    #[test]
    fn four_dimensional_count() {
        let g = Grid::centered(2, 17).unwrap();
        assert_eq!(g.len(), 83521);
        assert_eq!(g.interior_len(), 15usize.pow(4));
    }

    #[test]
    fn degenerate_box_rejected() {
        let d = Domain::Box {
            lo: vec![-0.5, 0.0],
            hi: vec![0.5, 0.0],
        };
        let err = build_grid(&d, &[5, 5]).unwrap_err();
        assert!(err.to_string().contains("degenerate box"), "{err}");
    }

    #[test]
    fn too_coarse_rejected() {
        let err = build_grid(&Domain::centered_box(1), &[5, 4]).unwrap_err();
        assert!(matches!(err, GridError::ResolutionTooSmall { axis: 1, .. }));
    }

    #[test]
    fn ball_is_not_gridable() {
        let err = build_grid(&Domain::Ball { radius: 1.0 }, &[9, 9]).unwrap_err();
        assert!(matches!(err, GridError::BallNotGridable));
    }

    #[test]
    fn coords_round_trip_through_indices() {
        let d = Domain::Box {
            lo: vec![-1.0, 0.0, 2.0, -0.5],
            hi: vec![1.0, 1.0, 3.0, 0.5],
        };
        let g = build_grid(&d, &[5, 6, 7, 8]).unwrap();
        let mut idx = [0usize; 4];
        for flat in [0, 17, 123, g.len() - 1] {
            g.multi_index(flat, &mut idx);
            assert_eq!(g.flat_index(&idx), flat);
            let c = g.coords(flat);
            for a in 0..4 {
                assert!((c[a] - (d_lo(&d)[a] + idx[a] as f64 * g.spacing()[a])).abs() < 1e-15);
            }
        }
        assert_eq!(g.coords(g.len() - 1), vec![1.0, 1.0, 3.0, 0.5]);
    }

    fn d_lo(d: &Domain) -> &[f64] {
        match d {
            Domain::Box { lo, .. } => lo,
            _ => unreachable!(),
        }
    }

    #[test]
    fn interior_has_full_neighbourhood() {
        let g = Grid::centered(2, 5).unwrap();
        let mut idx = [0usize; 4];
        for &flat in g.interior() {
            g.multi_index(flat, &mut idx);
            assert!(idx.iter().all(|&i| (1..=3).contains(&i)));
        }
        assert_eq!(g.interior_len(), 81);
    }

    #[test]
    fn non_finite_rejected() {
        let g = Arc::new(Grid::centered(1, 5).unwrap());
        let mut v = vec![0.0; 25];
        v[3] = f64::NAN;
        assert!(matches!(
            ScalarField::new(g, v),
            Err(GridError::NonFinite { node: 3 })
        ));
    }

    #[test]
    fn integrate_constants() {
        let g = Arc::new(Grid::centered(2, 9).unwrap());
        let zero = DensityField::constant(g.clone(), 0.0).unwrap();
        assert_eq!(integrate(&zero), 0.0);
        let d = DensityField::constant(g.clone(), 32.0).unwrap();
        let interior_volume = (7.0f64 / 8.0).powi(4);
        assert!((integrate(&d) - 32.0 * interior_volume).abs() < 1e-12);
    }

    #[test]
    fn negative_density_rejected() {
        let g = Arc::new(Grid::centered(1, 5).unwrap());
        let mut v = vec![1.0; 9];
        v[4] = -1e-3;
        assert!(DensityField::new(g, v).is_err());
    }
}
