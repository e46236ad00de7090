//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use mongeampere::grid::norm_sq;
use mongeampere::{DensityField, Grid, ScalarField};

/// `|z|² - 1` on the centered box with `nodes` per axis.
pub fn quadratic(n: usize, nodes: usize) -> ScalarField {
    let grid = Arc::new(Grid::centered(n, nodes).expect("valid grid"));
    ScalarField::from_fn(grid, |c| norm_sq(c) - 1.0)
}

/// The Cheng-Yau density `32 e^{1 - |z|²}` frozen at `u = |z|² - 1`, whose solution is that quadratic.
pub fn cheng_yau_density(u: &ScalarField) -> DensityField {
    DensityField::from_fn(u.grid().clone(), |c| 32.0 * (1.0 - norm_sq(c)).exp() * (norm_sq(c) - 1.0).exp())
        .expect("positive density")
}
