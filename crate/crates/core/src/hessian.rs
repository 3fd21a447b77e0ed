//! Second derivatives of the effective action by Wick contraction.
//!
//! Let `Q(s, t) = Σ_b c_b(t) (u_b · s)²` be the `s`-dependent part of the
//! action, where a bond `b` is either an edge (`u_b = δ_a - δ_b`,
//! `c_b = (β/2) e^{t_a + t_b}`) or, in the massed ensemble, a site
//! (`u_b = δ_i`, `c_b = (h/2) e^{t_i}`). Every `c_b` is an exponential of a
//! linear form in `t` with unit coefficients on the sites it touches, so
//!
//! ```text
//! ∂²C/∂t_i∂t_j = Σ_{b ∋ i, j} c_b g_bb - 2 Σ_{b ∋ i, b' ∋ j} c_b c_b' g_bb'²
//! ```
//!
//! with `g = Uᵀ C U` built from the physical covariance `C` of `s`.
//!
//! The lemma quantities `U`, `K` and `R` are defined for the constrained
//! ensemble under the weight `exp(-(s, D s))`, whose covariance is
//! `Ĉ = (β/2) C`. In that normalization `⟨U_i⟩ = Σ_{e ∋ i} w_e ĝ_ee`,
//! `K = Cov(U)`, and `C″ = 2⟨U⟩δ - K + R` where `R` is minus the Laplacian
//! with edge weights `w_e ĝ_ee`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{laplacian, Lattice};
use crate::linalg::{smallest_eigenvalue, DENSE_SITE_LIMIT};
use crate::model::{edge_weights, s_precision, Ensemble, ModelParams};

/// Identity tolerance (row sums, edge bound, Schwarz structure).
pub const IDENTITY_TOL: f64 = 1e-10;
/// Eigenvalue certificate tolerance.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// Covariance of `s` under its conditional Gaussian law given `t`.
#[derive(Debug, Clone)]
pub struct SCovariance {
    /// Physical covariance: `(βD)⁺` on the zero-sum subspace, or
    /// `(βD + h diag(e^t))⁻¹`.
    pub matrix: DMatrix<f64>,
    pub ensemble: Ensemble,
    pub beta: f64,
}

impl SCovariance {
    /// Covariance under `exp(-(s, D s))`, i.e. with `β/2` set to one.
    pub fn unit_normalized(&self) -> DMatrix<f64> {
        &self.matrix * (0.5 * self.beta)
    }
}

fn require_dense(op: &'static str, n: usize) -> Result<()> {
    if n > DENSE_SITE_LIMIT {
        return Err(Error::TooLarge {
            op,
            sites: n,
            limit: DENSE_SITE_LIMIT,
        });
    }
    Ok(())
}

pub fn s_covariance(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<SCovariance> {
    let n = lattice.num_sites();
    require_dense("s_covariance", n)?;
    let inv = s_precision(t, params, lattice)?.factorize()?.inverse()?;
    let matrix = covariance_from_inverse(inv, params.ensemble, n);
    Ok(SCovariance {
        matrix,
        ensemble: params.ensemble,
        beta: params.beta,
    })
}

/// Physical covariance from the inverse of the `s` precision operator.
pub(crate) fn covariance_from_inverse(inv: DMatrix<f64>, ensemble: Ensemble, n: usize) -> DMatrix<f64> {
    match ensemble {
        Ensemble::HMassed => inv,
        Ensemble::DeltaConstrained => {
            // Pin the last site, then project the pinned law onto Σ s = 0.
            let mut pinned = DMatrix::zeros(n, n);
            pinned.view_mut((0, 0), (n - 1, n - 1)).copy_from(&inv);
            let row_means: Vec<f64> = (0..n).map(|i| pinned.row(i).sum() / n as f64).collect();
            let grand = row_means.iter().sum::<f64>() / n as f64;
            DMatrix::from_fn(n, n, |i, j| pinned[(i, j)] - row_means[i] - row_means[j] + grand)
        }
    }
}

/// `⟨U_i⟩ = Σ_{j∼i} e^{t_i+t_j} ⟨(s_i - s_j)²⟩` under the unit-normalized law.
pub fn mean_u(t: &[f64], cov: &SCovariance, lattice: &Lattice) -> Result<Vec<f64>> {
    let w = edge_weights(t, lattice)?;
    let c = cov.unit_normalized();
    let mut u = vec![0.0; lattice.num_sites()];
    for (e, we) in lattice.edges().iter().zip(&w) {
        let v = we * (c[(e.a, e.a)] + c[(e.b, e.b)] - 2.0 * c[(e.a, e.b)]);
        u[e.a] += v;
        u[e.b] += v;
    }
    Ok(u)
}

/// `K_ij = ⟨U_i; U_j⟩` by Wick contraction, unit-normalized law.
pub fn k_matrix(t: &[f64], cov: &SCovariance, lattice: &Lattice) -> Result<DMatrix<f64>> {
    let w = edge_weights(t, lattice)?;
    let bonds: Vec<Bond> = lattice
        .edges()
        .iter()
        .zip(&w)
        .map(|(e, &we)| Bond {
            a: e.a,
            b: Some(e.b),
            coeff: we,
        })
        .collect();
    let g = bond_gram(&bonds, &cov.unit_normalized());
    Ok(bond_covariance(&bonds, &g, lattice.num_sites()))
}

#[derive(Debug, Clone, Copy)]
struct Bond {
    a: usize,
    b: Option<usize>,
    coeff: f64,
}

/// `g_bb' = u_bᵀ C u_b'`.
fn bond_gram(bonds: &[Bond], c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut u = DMatrix::zeros(n, bonds.len());
    for (k, bond) in bonds.iter().enumerate() {
        u[(bond.a, k)] = 1.0;
        if let Some(b) = bond.b {
            u[(b, k)] = -1.0;
        }
    }
    let cu = c * &u;
    u.transpose() * cu
}

/// `Σ_{b ∋ i, b' ∋ j} 2 c_b c_b' g_bb'²`.
fn bond_covariance(bonds: &[Bond], g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let m = bonds.len();
    let mut incidence = DMatrix::zeros(n, m);
    for (k, bond) in bonds.iter().enumerate() {
        incidence[(bond.a, k)] = 1.0;
        if let Some(b) = bond.b {
            incidence[(b, k)] = 1.0;
        }
    }
    let weighted = DMatrix::from_fn(m, m, |p, q| 2.0 * bonds[p].coeff * bonds[q].coeff * g[(p, q)] * g[(p, q)]);
    let k = &incidence * weighted * incidence.transpose();
    // Symmetrize away rounding.
    (&k + k.transpose()) * 0.5
}

/// Results of the lemma checks; `None` where a lemma does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaChecks {
    /// `Σ_j K_ij = 2⟨U_i⟩` to [`IDENTITY_TOL`] relative.
    pub row_sums: Option<bool>,
    /// `e^{t_i+t_j} ⟨(s_i - s_j)²⟩ ≤ ½ + IDENTITY_TOL` on every edge.
    pub edge_bound: Option<bool>,
    /// `λ_min(2⟨U⟩δ - K) ≥ -IDENTITY_TOL`.
    pub schwarz: Option<bool>,
    /// `R ≤ 0` with zero row sums.
    pub r_nonpositive: Option<bool>,
    /// Entrywise `K ≥ 0`.
    pub k_nonnegative: bool,
}

#[derive(Debug, Clone)]
pub struct HessianReport {
    pub mean_u: Vec<f64>,
    pub k: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub c_tilde_hess: DMatrix<f64>,
    pub e_hess: DMatrix<f64>,
    /// `λ_min(E″ - ((β - ½)(-Δ) + h))`.
    pub lambda_min_shifted: f64,
    pub max_edge_moment: f64,
    pub max_row_sum_error: f64,
    pub checks: LemmaChecks,
}

impl HessianReport {
    /// All applicable checks pass and the certificate is above tolerance.
    pub fn certified(&self) -> bool {
        let c = &self.checks;
        self.lambda_min_shifted >= -CERTIFICATE_TOL
            && c.k_nonnegative
            && [c.row_sums, c.edge_bound, c.schwarz, c.r_nonpositive]
                .iter()
                .all(|x| x.unwrap_or(true))
    }
}

/// `E″(t)` together with its `K`/`R` decomposition and the lemma checks.
pub fn hessian_effective(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<HessianReport> {
    let n = lattice.num_sites();
    require_dense("hessian_effective", n)?;
    let cov = s_covariance(t, params, lattice)?;
    let w = edge_weights(t, lattice)?;

    let mut bonds: Vec<Bond> = lattice
        .edges()
        .iter()
        .zip(&w)
        .map(|(e, &we)| Bond {
            a: e.a,
            b: Some(e.b),
            coeff: 0.5 * params.beta * we,
        })
        .collect();
    if params.ensemble == Ensemble::HMassed {
        bonds.extend(t.iter().enumerate().map(|(i, &ti)| Bond {
            a: i,
            b: None,
            coeff: 0.5 * params.h * ti.exp(),
        }));
    }
    let g = bond_gram(&bonds, &cov.matrix);
    let k = bond_covariance(&bonds, &g, n);

    // ⟨∂Q/∂t_i⟩ and the first (mean) term of C″.
    let mut mean_v = vec![0.0; n];
    let mut c_hess = -&k;
    for (p, bond) in bonds.iter().enumerate() {
        let v = bond.coeff * g[(p, p)];
        mean_v[bond.a] += v;
        c_hess[(bond.a, bond.a)] += v;
        if let Some(b) = bond.b {
            mean_v[b] += v;
            c_hess[(b, b)] += v;
            c_hess[(bond.a, b)] += v;
            c_hess[(b, bond.a)] += v;
        }
    }

    let mut r = c_hess.clone() + &k;
    for i in 0..n {
        r[(i, i)] -= 2.0 * mean_v[i];
    }

    let mut e_hess = c_hess.clone();
    for e in lattice.edges() {
        let ch = params.beta * (t[e.a] - t[e.b]).cosh();
        e_hess[(e.a, e.a)] += ch;
        e_hess[(e.b, e.b)] += ch;
        e_hess[(e.a, e.b)] -= ch;
        e_hess[(e.b, e.a)] -= ch;
    }
    for i in 0..n {
        e_hess[(i, i)] += params.h * t[i].cosh();
    }

    let lambda_min_shifted = smallest_eigenvalue(&shifted(&e_hess, params, lattice))?;

    let k_nonnegative = k.iter().all(|&x| x >= 0.0);
    let mut max_edge_moment = 0.0f64;
    for (p, bond) in bonds.iter().enumerate() {
        if bond.b.is_some() {
            max_edge_moment = max_edge_moment.max(bond.coeff * g[(p, p)]);
        }
    }
    let max_row_sum_error = (0..n)
        .map(|i| (k.row(i).sum() - 2.0 * mean_v[i]).abs() / (2.0 * mean_v[i]).abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    let checks = match params.ensemble {
        Ensemble::DeltaConstrained => {
            let mut schwarz = -k.clone();
            for i in 0..n {
                schwarz[(i, i)] += 2.0 * mean_v[i];
            }
            let r_rows = (0..n).map(|i| r.row(i).sum().abs()).fold(0.0, f64::max);
            let r_scale = r.amax().max(1.0);
            let r_top = -smallest_eigenvalue(&(-&r))?;
            LemmaChecks {
                row_sums: Some(max_row_sum_error <= IDENTITY_TOL),
                edge_bound: Some(max_edge_moment <= 0.5 + IDENTITY_TOL),
                schwarz: Some(smallest_eigenvalue(&schwarz)? >= -IDENTITY_TOL),
                r_nonpositive: Some(r_top <= IDENTITY_TOL * r_scale && r_rows <= IDENTITY_TOL * r_scale),
                k_nonnegative,
            }
        }
        Ensemble::HMassed => LemmaChecks {
            row_sums: None,
            edge_bound: None,
            schwarz: None,
            r_nonpositive: None,
            k_nonnegative,
        },
    };

    Ok(HessianReport {
        mean_u: mean_v,
        k,
        r,
        c_tilde_hess: c_hess,
        e_hess,
        lambda_min_shifted,
        max_edge_moment,
        max_row_sum_error,
        checks,
    })
}

/// `E″ - ((β - ½)(-Δ) + h)`.
fn shifted(e_hess: &DMatrix<f64>, params: &ModelParams, lattice: &Lattice) -> DMatrix<f64> {
    let mut m = e_hess - laplacian(lattice).to_dense() * (params.beta - 0.5);
    for i in 0..m.nrows() {
        m[(i, i)] -= params.h;
    }
    m
}

/// Smallest eigenvalue of `E″(t) - ((β - ½)(-Δ) + h)`; nonnegative for
/// `β ≥ 3/2` up to [`CERTIFICATE_TOL`].
pub fn theorem2_certificate(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<f64> {
    Ok(hessian_effective(t, params, lattice)?.lambda_min_shifted)
}

/// One line of a certificate batch.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub seed: u64,
    pub index: usize,
    pub lambda_min: f64,
    pub checks: LemmaChecks,
}

impl CertificateRow {
    pub const CSV_HEADER: &'static str =
        "seed,index,lambda_min,row_sums,edge_bound,schwarz,r_nonpositive,k_nonnegative";

    pub fn from_report(seed: u64, index: usize, report: &HessianReport) -> Self {
        Self {
            seed,
            index,
            lambda_min: report.lambda_min_shifted,
            checks: report.checks,
        }
    }

    pub fn passed(&self) -> bool {
        let c = &self.checks;
        self.lambda_min >= -CERTIFICATE_TOL
            && c.k_nonnegative
            && [c.row_sums, c.edge_bound, c.schwarz, c.r_nonpositive]
                .iter()
                .all(|x| x.unwrap_or(true))
    }

    pub fn to_csv(&self) -> String {
        let b = |x: Option<bool>| match x {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let c = &self.checks;
        format!(
            "{},{},{:.12e},{},{},{},{},{}",
            self.seed,
            self.index,
            self.lambda_min,
            b(c.row_sums),
            b(c.edge_bound),
            b(c.schwarz),
            b(c.r_nonpositive),
            b(Some(c.k_nonnegative)),
        )
    }
}
