//! Matrix-free Krylov solvers and preconditioners on structured grids.
//!
//! Vectors span every grid node; boundary entries are held at zero, so the
//! operators act on the interior with homogeneous Dirichlet data.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::operator::{Hess2, Stencil};

pub(crate) trait LinearOperator {
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub(crate) trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// One symmetric red-black Gauss-Seidel sweep (red, black, red).
    RedBlackGaussSeidel,
    /// Exact inverse of a constant-coefficient axis operator via sine transforms.
    #[default]
    Spectral,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct KrylovStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `-Δ_h` on interior nodes.
pub(crate) struct NegLaplacian {
    grid: Arc<Grid>,
    st: Stencil,
}

impl NegLaplacian {
    pub fn new(grid: Arc<Grid>) -> Self {
        let st = Stencil::new(&grid);
        Self { grid, st }
    }
}

impl LinearOperator for NegLaplacian {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for &i in self.grid.interior() {
            y[i] = -self.st.laplacian(x, i);
        }
    }
}

/// Negated linearization of `32 det H` around a fixed `n = 2` iterate:
/// `δ ↦ -(8 H22 Δ_1 δ + 8 H11 Δ_2 δ - 16 Re H12 (δ_{x1x2} + δ_{y1y2}) - 16 Im H12 (δ_{x1y2} - δ_{y1x2}))`.
pub(crate) struct LinearizedMa2 {
    grid: Arc<Grid>,
    st: Stencil,
    // per interior slot: [coef Δ_1, coef Δ_2, coef (xx+yy) mix, coef (xy-yx) mix]
    coef: Vec<[f64; 4]>,
}

impl LinearizedMa2 {
    pub fn new(grid: Arc<Grid>, hess: &[Hess2]) -> Self {
        let st = Stencil::new(&grid);
        let coef = hess
            .iter()
            .map(|h| [8.0 * h.q, 8.0 * h.p, -16.0 * h.re, -16.0 * h.im])
            .collect();
        Self { grid, st, coef }
    }

    /// Mean coefficients of the two pure axis pairs.
    pub fn mean_axis_coefficients(&self) -> [f64; 2] {
        let m = self.coef.len().max(1) as f64;
        let a = self.coef.iter().map(|c| c[0]).sum::<f64>() / m;
        let b = self.coef.iter().map(|c| c[1]).sum::<f64>() / m;
        [a, b]
    }
}

impl LinearOperator for LinearizedMa2 {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let st = &self.st;
        let res = self.grid.resolution();
        let [s0, s1, s2] = [st.strides[0], st.strides[1], st.strides[2]];
        let h = &st.inv_h2;
        let mix = |a: usize, b: usize| st.inv_mix[a * 4 + b];
        let (m02, m13, m03, m12) = (mix(0, 2), mix(1, 3), mix(0, 3), mix(1, 2));
        let len = res[3] - 2;
        let slab_slots = (res[1] - 2) * (res[2] - 2) * len;
        // one slab per interior index of the outermost axis; slabs write disjoint rows
        y.par_chunks_mut(s0)
            .enumerate()
            .filter(|(i0, _)| *i0 >= 1 && *i0 + 1 < res[0])
            .for_each(|(i0, y_slab)| {
                let mut slot = (i0 - 1) * slab_slots;
                for i1 in 1..res[1] - 1 {
                    for i2 in 1..res[2] - 1 {
                        let base = i0 * s0 + i1 * s1 + i2 * s2;
                        let row = |off: isize| {
                            let start = (base as isize + off) as usize;
                            &x[start..start + len]
                        };
                        let (s0, s1, s2) = (s0 as isize, s1 as isize, s2 as isize);
                        let c = row(1);
                        let (p0, q0) = (row(1 + s0), row(1 - s0));
                        let (p1, q1) = (row(1 + s1), row(1 - s1));
                        let (p2, q2) = (row(1 + s2), row(1 - s2));
                        let (p3, q3) = (row(2), row(0));
                        let a02 = [row(1 + s0 + s2), row(1 + s0 - s2), row(1 - s0 + s2), row(1 - s0 - s2)];
                        let a12 = [row(1 + s1 + s2), row(1 + s1 - s2), row(1 - s1 + s2), row(1 - s1 - s2)];
                        let a03 = [row(2 + s0), row(s0), row(2 - s0), row(-s0)];
                        let a13 = [row(2 + s1), row(s1), row(2 - s1), row(-s1)];
                        let coef = &self.coef[slot..slot + len];
                        let local = base - i0 * s0 as usize + 1;
                        let out = &mut y_slab[local..local + len];
                        for j in 0..len {
                            let [c1, c2, cm, cq] = coef[j];
                            let two = 2.0 * c[j];
                            let lap1 = (p0[j] - two + q0[j]) * h[0] + (p1[j] - two + q1[j]) * h[1];
                            let lap2 = (p2[j] - two + q2[j]) * h[2] + (p3[j] - two + q3[j]) * h[3];
                            let d = |a: &[&[f64]; 4]| a[0][j] - a[1][j] - a[2][j] + a[3][j];
                            let mp = d(&a02) * m02 + d(&a13) * m13;
                            let mq = d(&a03) * m03 - d(&a12) * m12;
                            out[j] = -(c1 * lap1 + c2 * lap2 + cm * mp + cq * mq);
                        }
                        slot += len;
                    }
                }
            });
    }
}

/// Symmetric red-black Gauss-Seidel for `-Σ_a c_a D_aa` with constant `c_a`.
pub(crate) struct RedBlackGs {
    red: Vec<usize>,
    black: Vec<usize>,
    strides: Vec<usize>,
    weights: Vec<f64>,
    inv_diag: f64,
}

impl RedBlackGs {
    pub fn new(grid: &Grid, axis_coef: &[f64]) -> Self {
        let mut idx = vec![0usize; grid.dim()];
        let (mut red, mut black) = (Vec::new(), Vec::new());
        for &flat in grid.interior() {
            grid.multi_index(flat, &mut idx);
            if idx.iter().sum::<usize>() % 2 == 0 {
                red.push(flat);
            } else {
                black.push(flat);
            }
        }
        let weights: Vec<f64> = grid
            .spacing()
            .iter()
            .zip(axis_coef)
            .map(|(h, c)| c / (h * h))
            .collect();
        let diag: f64 = weights.iter().map(|w| 2.0 * w).sum();
        Self {
            red,
            black,
            strides: grid.strides().to_vec(),
            weights,
            inv_diag: 1.0 / diag,
        }
    }

    fn sweep(&self, nodes: &[usize], r: &[f64], z: &mut [f64]) {
        for &i in nodes {
            let mut acc = r[i];
            for (s, w) in self.strides.iter().zip(&self.weights) {
                acc += w * (z[i + s] + z[i - s]);
            }
            z[i] = acc * self.inv_diag;
        }
    }
}

impl Preconditioner for RedBlackGs {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        self.sweep(&self.red, r, z);
        self.sweep(&self.black, r, z);
        self.sweep(&self.red, r, z);
    }
}

/// Type-I sine transform `F_k = Σ_j f_j sin(π jk / N)`, `N = m + 1`, applied to
/// contiguous lines of length `m`. Each line is folded into
/// `y_j = sin(π j / N)(f_j + f_{N-j}) + (f_j - f_{N-j}) / 2`, whose length-`N` real
/// DFT gives the even outputs directly and the odd ones as a running sum; two
/// lines share one complex FFT as real and imaginary parts.
struct SineTransform {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
    sines: Vec<f64>,
}

impl SineTransform {
    fn new(planner: &mut FftPlanner<f64>, m: usize) -> Self {
        let n = m + 1;
        Self {
            m,
            fft: planner.plan_fft_forward(n),
            sines: (0..n)
                .map(|j| (j as f64 * std::f64::consts::PI / n as f64).sin())
                .collect(),
        }
    }

    fn scratch_len(&self) -> usize {
        self.fft.get_inplace_scratch_len()
    }

    #[inline]
    fn fold(&self, f: &[f64], j: usize) -> f64 {
        let n = self.m + 1;
        let a = f[j - 1];
        let b = f[n - j - 1];
        self.sines[j] * (a + b) + 0.5 * (a - b)
    }

    fn unfold(y_c: impl Fn(usize) -> (f64, f64), out: &mut [f64]) {
        // y_c(k) = (Re Y_k, -Im Y_k)
        let m = out.len();
        let (c0, _) = y_c(0);
        let mut odd = 0.5 * c0;
        out[0] = odd;
        let mut k = 1;
        while 2 * k - 1 < m {
            let (c, s) = y_c(k);
            out[2 * k - 1] = s;
            if 2 * k < m {
                odd += c;
                out[2 * k] = odd;
            }
            k += 1;
        }
    }

    fn process(&self, lines: &mut [f64], cbuf: &mut Vec<Complex64>, scratch: &mut [Complex64]) {
        let m = self.m;
        let n = m + 1;
        let count = lines.len() / m;
        let pairs = count.div_ceil(2);
        cbuf.clear();
        cbuf.resize(pairs * n, Complex64::new(0.0, 0.0));
        for (p, z) in cbuf.chunks_exact_mut(n).enumerate() {
            let a = &lines[2 * p * m..(2 * p + 1) * m];
            if 2 * p + 1 < count {
                let b = &lines[(2 * p + 1) * m..(2 * p + 2) * m];
                for j in 1..n {
                    z[j] = Complex64::new(self.fold(a, j), self.fold(b, j));
                }
            } else {
                for j in 1..n {
                    z[j] = Complex64::new(self.fold(a, j), 0.0);
                }
            }
        }
        self.fft.process_with_scratch(cbuf, scratch);
        for (p, z) in cbuf.chunks_exact(n).enumerate() {
            let conj_mirror = |k: usize| z[(n - k) % n].conj();
            let a = |k: usize| {
                let y = (z[k] + conj_mirror(k)) * 0.5;
                (y.re, -y.im)
            };
            Self::unfold(a, &mut lines[2 * p * m..(2 * p + 1) * m]);
            if 2 * p + 1 < count {
                let b = |k: usize| {
                    let y = (z[k] - conj_mirror(k)) * Complex64::new(0.0, -0.5);
                    (y.re, -y.im)
                };
                Self::unfold(b, &mut lines[(2 * p + 1) * m..(2 * p + 2) * m]);
            }
        }
    }
}

/// Exact solve of `-Σ_a c_a D_aa z = r` (constant `c_a`, zero Dirichlet data)
/// by diagonalising every axis with a type-I sine transform.
pub(crate) struct SpectralLaplace {
    interior: Vec<usize>,
    dims: Vec<usize>,
    cstrides: Vec<usize>,
    inv_eig: Vec<f64>,
    transforms: Vec<SineTransform>,
    scale: f64,
    work: std::cell::RefCell<Work>,
}

struct Work {
    data: Vec<f64>,
    block: Vec<f64>,
    cbuf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

// lines handed to one batched FFT call when the axis is contiguous
const LINE_BATCH: usize = 512;

impl SpectralLaplace {
    pub fn new(grid: &Grid, axis_coef: &[f64]) -> Self {
        let dim = grid.dim();
        let dims: Vec<usize> = grid.resolution().iter().map(|r| r - 2).collect();
        let mut cstrides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            cstrides[a] = cstrides[a + 1] * dims[a + 1];
        }
        let total: usize = dims.iter().product();
        let axis_eigs: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let m = dims[a];
                let h = grid.spacing()[a];
                (1..=m)
                    .map(|k| {
                        let s = (k as f64 * std::f64::consts::PI / (2.0 * (m + 1) as f64)).sin();
                        axis_coef[a] * 4.0 * s * s / (h * h)
                    })
                    .collect()
            })
            .collect();
        let mut inv_eig = vec![0.0; total];
        let mut idx = vec![0usize; dim];
        for (flat, slot) in inv_eig.iter_mut().enumerate() {
            let mut rem = flat;
            for a in 0..dim {
                idx[a] = rem / cstrides[a];
                rem %= cstrides[a];
            }
            let lam: f64 = (0..dim).map(|a| axis_eigs[a][idx[a]]).sum();
            *slot = 1.0 / lam;
        }
        let mut planner = FftPlanner::new();
        let transforms: Vec<SineTransform> =
            dims.iter().map(|&m| SineTransform::new(&mut planner, m)).collect();
        let scale = dims.iter().map(|&m| 2.0 / (m + 1) as f64).product();
        let scratch_len = transforms.iter().map(|t| t.scratch_len()).max().unwrap_or(0);
        let largest_block = dims.iter().max().copied().unwrap_or(0) * LINE_BATCH;
        Self {
            interior: grid.interior().to_vec(),
            dims,
            cstrides,
            inv_eig,
            transforms,
            scale,
            work: std::cell::RefCell::new(Work {
                data: vec![0.0; total],
                block: vec![0.0; largest_block],
                cbuf: Vec::new(),
                scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            }),
        }
    }

    fn transform_all_axes(&self, data: &mut [f64], work: &mut Work) {
        let total = data.len();
        for a in 0..self.dims.len() {
            let m = self.dims[a];
            let cs = self.cstrides[a];
            let tr = &self.transforms[a];
            let scratch = &mut work.scratch[..tr.scratch_len()];
            if cs == 1 {
                for chunk in data.chunks_mut(m * LINE_BATCH) {
                    tr.process(chunk, &mut work.cbuf, scratch);
                }
                continue;
            }
            // gather LINE_BATCH strided lines at a time so the transformed axis is contiguous
            let block = m * cs;
            for outer in (0..total).step_by(block) {
                for inner0 in (0..cs).step_by(LINE_BATCH) {
                    let w = LINE_BATCH.min(cs - inner0);
                    let tmp = &mut work.block[..w * m];
                    for k in 0..m {
                        let row = &data[outer + k * cs + inner0..outer + k * cs + inner0 + w];
                        for (i, v) in row.iter().enumerate() {
                            tmp[i * m + k] = *v;
                        }
                    }
                    tr.process(tmp, &mut work.cbuf, scratch);
                    for k in 0..m {
                        let row = &mut data[outer + k * cs + inner0..outer + k * cs + inner0 + w];
                        for (i, v) in row.iter_mut().enumerate() {
                            *v = tmp[i * m + k];
                        }
                    }
                }
            }
        }
    }
}

impl Preconditioner for SpectralLaplace {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut guard = self.work.borrow_mut();
        let work = &mut *guard;
        let mut data = std::mem::take(&mut work.data);
        for (slot, &i) in self.interior.iter().enumerate() {
            data[slot] = r[i];
        }
        self.transform_all_axes(&mut data, work);
        for (v, w) in data.iter_mut().zip(&self.inv_eig) {
            *v *= w;
        }
        self.transform_all_axes(&mut data, work);
        z.iter_mut().for_each(|v| *v = 0.0);
        for (slot, &i) in self.interior.iter().enumerate() {
            z[i] = data[slot] * self.scale;
        }
        work.data = data;
    }
}

/// Preconditioned conjugate gradients for SPD operators. `x` holds the initial
/// guess on entry.
pub(crate) fn pcg(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let len = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return KrylovStats {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; len];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; len];
    pc.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / bnorm;
    for it in 0..max_iter {
        if rel <= rel_tol {
            return KrylovStats {
                iterations: it,
                rel_residual: rel,
                converged: true,
            };
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return KrylovStats {
                iterations: it,
                rel_residual: rel,
                converged: false,
            };
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm(&r) / bnorm;
        pc.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    KrylovStats {
        iterations: max_iter,
        rel_residual: rel,
        converged: rel <= rel_tol,
    }
}

/// Right-preconditioned BiCGSTAB for nonsymmetric operators.
pub(crate) fn bicgstab(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let len = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return KrylovStats {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; len];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut p_hat = vec![0.0; len];
    let mut s_hat = vec![0.0; len];
    let mut t = vec![0.0; len];
    let mut rel = norm(&r) / bnorm;
    for it in 0..max_iter {
        if rel <= rel_tol {
            return KrylovStats {
                iterations: it,
                rel_residual: rel,
                converged: true,
            };
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..len {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pc.apply(&p, &mut p_hat);
        op.apply(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            break;
        }
        alpha = rho / rv;
        // r becomes s in place
        for i in 0..len {
            r[i] -= alpha * v[i];
        }
        let snorm = norm(&r) / bnorm;
        if snorm <= rel_tol {
            for i in 0..len {
                x[i] += alpha * p_hat[i];
            }
            return KrylovStats {
                iterations: it + 1,
                rel_residual: snorm,
                converged: true,
            };
        }
        pc.apply(&r, &mut s_hat);
        op.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        for i in 0..len {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        rel = norm(&r) / bnorm;
    }
    KrylovStats {
        iterations: max_iter,
        rel_residual: rel,
        converged: rel <= rel_tol,
    }
}
