//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's factorization or covariance code.

#![allow(dead_code)]

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix3, Vector3};

/// The three-site ring, `t_2` fastest-varying site last.
pub const RING3_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

/// Constrained effective action on the three-site ring.
///
/// By the matrix-tree theorem the product of the nonzero eigenvalues of
/// `βD` is `3 β² (w01 w12 + w12 w02 + w02 w01)` with `w_ij = e^{t_i + t_j}`.
pub fn ring3_action(t: [f64; 3], beta: f64, h: f64) -> f64 {
    let w = RING3_EDGES.map(|(i, j)| (t[i] + t[j]).exp());
    let trees = w[0] * w[1] + w[1] * w[2] + w[2] * w[0];
    let coupling: f64 = RING3_EDGES.iter().map(|&(i, j)| (t[i] - t[j]).cosh()).sum();
    let site: f64 = t.iter().map(|x| h * x.cosh() - x).sum();
    beta * coupling + 0.5 * (3.0 * beta * beta * trees).ln() + site
}

/// `Var(s_0)` on the zero-sum slice: `(βD + 11ᵀ/3)⁻¹ - 11ᵀ/3`, entry `(0,0)`.
pub fn ring3_s0_variance(t: [f64; 3], beta: f64) -> f64 {
    let mut l = Matrix3::zeros();
    for (i, j) in RING3_EDGES {
        let w = beta * (t[i] + t[j]).exp();
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    let ones = Vector3::repeat(1.0);
    let j = ones * ones.transpose() / 3.0;
    let inv = (l + j).try_inverse().expect("grounded Laplacian is invertible");
    (inv - j)[(0, 0)]
}

/// `E(2 cosh t + s² e^t)²` for `s ~ N(0, c)`.
pub fn trace_sq_given_variance(t: f64, c: f64) -> f64 {
    let a = 2.0 * t.cosh();
    let b = t.exp();
    a * a + 2.0 * a * b * c + 3.0 * b * b * c * c
}

/// Composite Gauss–Legendre nodes and weights on `[lo, hi]`.
pub fn legendre_grid(lo: f64, hi: f64, panels: usize, degree: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).unwrap());
    let width = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * degree);
    for k in 0..panels {
        let a = lo + k as f64 * width;
        for &(x, w) in rule.iter() {
            out.push((a + 0.5 * width * (x + 1.0), 0.5 * width * w));
        }
    }
    out
}

/// `(⟨sinh t_0⟩, ⟨(Tr σ₃ S₀)²⟩)` on the three-site ring by direct quadrature.
///
/// Coordinates `t = (c + a, c + b, c - a - b)` have constant Jacobian; the
/// weight decays doubly exponentially in `c` through `h cosh`.
pub fn ring3_expectations(beta: f64, h: f64, panels: usize) -> (f64, f64) {
    let cs = legendre_grid(-12.0, 12.0, panels, 8);
    let rel = legendre_grid(-7.0, 7.0, panels, 8);
    // Shift by the action at the saddle of the c-direction to avoid underflow.
    let reference = ring3_action([0.0; 3], beta, h);
    let (mut z, mut sinh, mut tsq) = (0.0, 0.0, 0.0);
    for &(c, wc) in &cs {
        for &(a, wa) in &rel {
            for &(b, wb) in &rel {
                let t = [c + a, c + b, c - a - b];
                let e = ring3_action(t, beta, h) - reference;
                if e > 700.0 {
                    continue;
                }
                let w = wc * wa * wb * (-e).exp();
                z += w;
                sinh += w * t[0].sinh();
                tsq += w * trace_sq_given_variance(t[0], ring3_s0_variance(t, beta));
            }
        }
    }
    (sinh / z, tsq / z)
}

/// Central finite-difference Hessian from values only, with one Richardson
/// step: `(4 H(δ/2) - H(δ)) / 3`.
pub fn fd_hessian_from_values<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], delta: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let raw = |d: f64| {
        let mut out = vec![vec![0.0; n]; n];
        let mut y = x.to_vec();
        let f0 = f(x);
        for i in 0..n {
            for j in i..n {
                let entry = if i == j {
                    y[i] = x[i] + d;
                    let fp = f(&y);
                    y[i] = x[i] - d;
                    let fm = f(&y);
                    y[i] = x[i];
                    (fp - 2.0 * f0 + fm) / (d * d)
                } else {
                    let mut g = |si: f64, sj: f64| {
                        y[i] = x[i] + si * d;
                        y[j] = x[j] + sj * d;
                        let v = f(&y);
                        y[i] = x[i];
                        y[j] = x[j];
                        v
                    };
                    (g(1.0, 1.0) - g(1.0, -1.0) - g(-1.0, 1.0) + g(-1.0, -1.0)) / (4.0 * d * d)
                };
                out[i][j] = entry;
                out[j][i] = entry;
            }
        }
        out
    };
    let coarse = raw(delta);
    let fine = raw(0.5 * delta);
    (0..n)
        .map(|i| (0..n).map(|j| (4.0 * fine[i][j] - coarse[i][j]) / 3.0).collect())
        .collect()
}

/// Unique scratch directory under the target tree.
pub fn scratch_dir(name: &str) -> std::path::PathBuf {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
