//! The discrete complex Hessian and Monge-Ampere density.
//!
//! With `dd^c = 2i ∂∂̄`, a smooth `u` has `(dd^c u)^n = 4^n n! det(H) dλ` where
//! `H_{jk} = ∂²u/∂z_j∂z̄_k = ¼[(u_{x_j x_k} + u_{y_j y_k}) + i(u_{x_j y_k} − u_{y_j x_k})]`.
//! Pure second derivatives use the 3-point central stencil, mixed ones the
//! nested 4-point diagonal stencil. For `n = 1` the density is the 5-point
//! Laplacian.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::{DensityField, Grid, HermitianField, ScalarField};

/// `4^n n!`, the constant in front of `det H`.
pub fn ma_constant(n: usize) -> f64 {
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    4f64.powi(n as i32) * fact
}

/// Precomputed strides and stencil weights for a grid.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub(crate) strides: Vec<usize>,
    pub(crate) inv_h2: Vec<f64>,
    // 1 / (4 h_a h_b), row-major dim x dim
    pub(crate) inv_mix: Vec<f64>,
    dim: usize,
}

impl Stencil {
    pub fn new(grid: &Grid) -> Self {
        let dim = grid.dim();
        let h = grid.spacing();
        let mut inv_mix = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                inv_mix[a * dim + b] = 1.0 / (4.0 * h[a] * h[b]);
            }
        }
        Self {
            strides: grid.strides().to_vec(),
            inv_h2: h.iter().map(|h| 1.0 / (h * h)).collect(),
            inv_mix,
            dim,
        }
    }

    #[inline(always)]
    pub(crate) fn d2(&self, u: &[f64], i: usize, a: usize) -> f64 {
        let s = self.strides[a];
        (u[i + s] - 2.0 * u[i] + u[i - s]) * self.inv_h2[a]
    }

    #[inline(always)]
    pub(crate) fn dmix(&self, u: &[f64], i: usize, a: usize, b: usize) -> f64 {
        let sa = self.strides[a];
        let sb = self.strides[b];
        (u[i + sa + sb] - u[i + sa - sb] - u[i - sa + sb] + u[i - sa - sb])
            * self.inv_mix[a * self.dim + b]
    }

    /// Upper-triangle Hessian entry `H_{jk}` (`j <= k`) at flat node `i`.
    #[inline]
    pub(crate) fn entry(&self, u: &[f64], i: usize, j: usize, k: usize) -> Complex64 {
        let (xj, yj) = (2 * j, 2 * j + 1);
        if j == k {
            return Complex64::new(0.25 * (self.d2(u, i, xj) + self.d2(u, i, yj)), 0.0);
        }
        let (xk, yk) = (2 * k, 2 * k + 1);
        Complex64::new(
            0.25 * (self.dmix(u, i, xj, xk) + self.dmix(u, i, yj, yk)),
            0.25 * (self.dmix(u, i, xj, yk) - self.dmix(u, i, yj, xk)),
        )
    }

    /// The 2x2 Hessian `[[p, c], [c̄, q]]` at node `i` as `(p, q, Re c, Im c)`.
    #[inline]
    pub(crate) fn hessian2(&self, u: &[f64], i: usize) -> Hess2 {
        let c = self.entry(u, i, 0, 1);
        Hess2 {
            p: 0.25 * (self.d2(u, i, 0) + self.d2(u, i, 1)),
            q: 0.25 * (self.d2(u, i, 2) + self.d2(u, i, 3)),
            re: c.re,
            im: c.im,
        }
    }

    /// Sum of the 3-point second differences over all axes.
    #[inline]
    pub(crate) fn laplacian(&self, u: &[f64], i: usize) -> f64 {
        (0..self.dim).map(|a| self.d2(u, i, a)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Hess2 {
    pub p: f64,
    pub q: f64,
    pub re: f64,
    pub im: f64,
}

impl Hess2 {
    #[inline]
    pub fn det(&self) -> f64 {
        self.p * self.q - (self.re * self.re + self.im * self.im)
    }

    #[inline]
    pub fn min_eigenvalue(&self) -> f64 {
        let half_gap = 0.5 * (self.p - self.q);
        0.5 * (self.p + self.q) - (half_gap * half_gap + self.re * self.re + self.im * self.im).sqrt()
    }
}

/// The complex Hessian at every interior node.
pub fn complex_hessian(u: &ScalarField) -> HermitianField {
    let grid = u.grid().clone();
    let st = Stencil::new(&grid);
    let interior = grid.interior().to_vec();
    let vals = u.values();
    HermitianField::from_upper(grid, |slot, j, k| st.entry(vals, interior[slot], j, k))
}

/// Determinant and smallest eigenvalue of a Hermitian matrix.
pub fn hermitian_det_and_min_eig(n: usize, m: &[Complex64]) -> (f64, f64) {
    match n {
        1 => (m[0].re, m[0].re),
        2 => {
            let h = Hess2 {
                p: m[0].re,
                q: m[3].re,
                re: m[1].re,
                im: m[1].im,
            };
            (h.det(), h.min_eigenvalue())
        }
        _ => {
            let mat = DMatrix::from_row_slice(n, n, m);
            let eig = SymmetricEigen::new(mat);
            let det = eig.eigenvalues.iter().product();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            (det, min)
        }
    }
}

/// Unclamped nodewise `4^n n! det H` plus the largest psh violation.
pub(crate) fn signed_ma(grid: &Arc<Grid>, st: &Stencil, u: &[f64]) -> (Vec<f64>, f64) {
    let n = grid.n();
    let c = ma_constant(n);
    // (value, smallest eigenvalue) per interior node
    let pairs: Vec<(f64, f64)> = match n {
        1 => grid
            .interior()
            .par_iter()
            .map(|&i| {
                let lap = st.d2(u, i, 0) + st.d2(u, i, 1);
                (lap, 0.25 * lap)
            })
            .collect(),
        2 => grid
            .interior()
            .par_iter()
            .map(|&i| {
                let h = st.hessian2(u, i);
                (c * h.det(), h.min_eigenvalue())
            })
            .collect(),
        _ => grid
            .interior()
            .par_iter()
            .map_init(
                || vec![Complex64::new(0.0, 0.0); n * n],
                |m, &i| {
                    for j in 0..n {
                        for k in j..n {
                            let e = st.entry(u, i, j, k);
                            m[j * n + k] = e;
                            m[k * n + j] = e.conj();
                        }
                    }
                    let (det, lmin) = hermitian_det_and_min_eig(n, m);
                    (c * det, lmin)
                },
            )
            .collect(),
    };
    let defect = pairs.iter().fold(0.0f64, |d, p| d.max(-p.1));
    (pairs.into_iter().map(|p| p.0).collect(), defect)
}

/// Discrete Monge-Ampere density together with the psh defect
/// `max(0, -min λ_min(H))`.
#[derive(Clone, Debug)]
pub struct MaDensity {
    pub density: DensityField,
    pub psh_defect: f64,
}

/// `4^n n! det H` at every interior node, negative values clamped to zero.
pub fn ma_density(u: &ScalarField) -> MaDensity {
    let grid = u.grid().clone();
    let st = Stencil::new(&grid);
    let (mut raw, psh_defect) = signed_ma(&grid, &st, u.values());
    for v in &mut raw {
        *v = v.max(0.0);
    }
    MaDensity {
        density: DensityField::from_raw(grid, raw),
        psh_defect,
    }
}

/// Unclamped `4^n n! det H` per interior node (signed), for residual checks.
pub fn ma_signed(u: &ScalarField) -> Vec<f64> {
    let grid = u.grid().clone();
    let st = Stencil::new(&grid);
    signed_ma(&grid, &st, u.values()).0
}

/// `max(0, -λ_min(H))` over interior nodes.
pub fn psh_defect(u: &ScalarField) -> f64 {
    ma_density(u).psh_defect
}
