//! The H² sigma model in matrix and horospherical form, the operator `D(t)`
//! and the effective actions obtained by integrating out the `s` field.
//!
//! # Conventions
//!
//! The joint weight is `exp(-A) Π e^{t_j} dt_j ds_j` with
//!
//! ```text
//! A = β Σ_<ij> [cosh(t_i - t_j) + ½ (s_i - s_j)² e^{t_i + t_j}] + h Σ_j [cosh t_j + ½ s_j² e^{t_j}]
//! ```
//!
//! `β` is kept explicit everywhere. Integrating `s` leaves
//! `E(t) = β Σ_<ij> cosh(t_i - t_j) + C(t) + Σ_j (h cosh t_j - t_j)` where the
//! log-determinant term is fixed, with no further additive constants, as
//!
//! * [`Ensemble::DeltaConstrained`]: `C(t) = ½ ln det(βD(t))` on the zero-sum
//!   subspace, i.e. half the log of the product of the nonzero eigenvalues of
//!   `βD(t)`. This includes `½(|Λ| - 1) ln β` relative to the β-free choice.
//! * [`Ensemble::HMassed`]: `C(t) = ½ ln det(βD(t) + h diag(e^t))`.
//!
//! Dropped constants (`ln 2π`, the δ-function normalization) cancel in every
//! normalized expectation. With these conventions a global shift `t → t + c`
//! at `h = 0` changes the constrained action by exactly `-c`.
//!
//! The zero-sum determinant is evaluated through the grounded operator (last
//! site removed): `ln det(βD)|_⊥ = ln |Λ| + ln det(βD)_grounded`.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{Factorization, SymmetricOperator};

/// How the zero mode of the `s` field is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// `δ(Σ s_j)` replaces the `h s² e^t` mass term.
    DeltaConstrained,
    /// The physical `½ h Σ s_j² e^{t_j}` mass term.
    HMassed,
}

/// Coupling `β`, regularizer `h`, and ensemble variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub h: f64,
    pub ensemble: Ensemble,
}

impl ModelParams {
    pub fn new(beta: f64, h: f64, ensemble: Ensemble) -> Result<Self> {
        let params = Self { beta, h, ensemble };
        params.validate()?;
        Ok(params)
    }

    pub fn delta(beta: f64, h: f64) -> Result<Self> {
        Self::new(beta, h, Ensemble::DeltaConstrained)
    }

    pub fn massed(beta: f64, h: f64) -> Result<Self> {
        Self::new(beta, h, Ensemble::HMassed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParams(format!("h must be non-negative, got {}", self.h)));
        }
        if self.ensemble == Ensemble::HMassed && self.h == 0.0 {
            return Err(Error::InvalidParams(
                "the h-massed ensemble needs h > 0 to be normalizable".into(),
            ));
        }
        Ok(())
    }
}

/// Horospherical field pair per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

impl FieldConfig {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: vec![0.0; n],
            s: vec![0.0; n],
        }
    }

    pub fn validate(&self, lattice: &Lattice, ensemble: Ensemble) -> Result<()> {
        lattice.check_len(&self.t)?;
        lattice.check_len(&self.s)?;
        for (i, (t, s)) in self.t.iter().zip(&self.s).enumerate() {
            if !t.is_finite() || !s.is_finite() {
                return Err(Error::InvalidParams(format!("non-finite field at site {i}")));
            }
        }
        if ensemble == Ensemble::DeltaConstrained {
            let sum: f64 = self.s.iter().sum();
            if sum.abs() > 1e-10 {
                return Err(Error::InvalidParams(format!(
                    "constrained ensemble requires Σ s = 0, got {sum:e}"
                )));
            }
        }
        Ok(())
    }
}

pub type Complex64 = Complex<f64>;

/// The 2×2 Hermitian matrix `M = S σ₃`, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinMatrix(pub [Complex64; 4]);

impl SpinMatrix {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self([one, zero, zero, one])
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[2 * row + col]
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0] + self.0[3]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0] * self.0[3] - self.0[1] * self.0[2]
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (self.0[0].im).abs() <= tol
            && (self.0[3].im).abs() <= tol
            && (self.0[1] - self.0[2].conj()).norm() <= tol
    }

    /// `Tr(S_a S_b) = Tr(M_a σ₃ M_b σ₃)`.
    pub fn coupling_trace(&self, other: &SpinMatrix) -> f64 {
        let [a00, a01, a10, a11] = self.0;
        let [b00, b01, b10, b11] = other.0;
        // (σ₃ M σ₃) flips the sign of the off-diagonal entries.
        (a00 * b00 - a01 * b10 - a10 * b01 + a11 * b11).re
    }
}

fn check_exponent(site: usize, x: f64, what: &str) -> Result<()> {
    if x > 700.0 || x < -700.0 || !x.is_finite() {
        return Err(Error::Overflow {
            site,
            what: format!("{what} = {x} exceeds the exponent range"),
        });
    }
    Ok(())
}

/// `S σ₃ = n_s a_t (n_s a_t)*` in horospherical coordinates.
pub fn horo_to_matrix(t: f64, s: f64) -> Result<SpinMatrix> {
    check_exponent(0, t, "t")?;
    let et = t.exp();
    let diag = t.cosh() + 0.5 * s * s * et;
    let re_off = t.sinh() - 0.5 * s * s * et;
    let im = s * et;
    if !diag.is_finite() || !re_off.is_finite() || !im.is_finite() {
        return Err(Error::Overflow {
            site: 0,
            what: format!("matrix entries overflow at (t, s) = ({t}, {s})"),
        });
    }
    Ok(SpinMatrix([
        Complex64::new(diag, 0.0),
        Complex64::new(re_off, -im),
        Complex64::new(re_off, im),
        Complex64::new(diag, 0.0),
    ]))
}

/// `½β Σ_<ij> Tr(S_i S_j) + ½h Σ_j Tr(σ₃ S_j)`.
pub fn action_matrix(spins: &[SpinMatrix], params: &ModelParams, lattice: &Lattice) -> Result<f64> {
    if spins.len() != lattice.num_sites() {
        return Err(Error::LengthMismatch {
            expected: lattice.num_sites(),
            found: spins.len(),
        });
    }
    for (i, m) in spins.iter().enumerate() {
        let det = m.det();
        let scale = m.entry(0, 0).norm().max(1.0).powi(2);
        if (det - Complex64::new(1.0, 0.0)).norm() > 1e-9 * scale {
            return Err(Error::InvalidParams(format!(
                "spin matrix at site {i} has determinant {det}, expected 1"
            )));
        }
    }
    let edge: f64 = lattice
        .edges()
        .iter()
        .map(|e| spins[e.a].coupling_trace(&spins[e.b]))
        .sum();
    let site: f64 = spins.iter().map(|m| m.trace().re).sum();
    Ok(0.5 * params.beta * edge + 0.5 * params.h * site)
}

/// The full horospherical action including the `h s² e^t` term.
pub fn action_horo(config: &FieldConfig, params: &ModelParams, lattice: &Lattice) -> Result<f64> {
    lattice.check_len(&config.t)?;
    lattice.check_len(&config.s)?;
    let (t, s) = (&config.t, &config.s);
    let mut edge_sum = 0.0;
    for e in lattice.edges() {
        let (a, b) = (e.a, e.b);
        check_exponent(a, t[a] + t[b], "t_a + t_b")?;
        let ds = s[a] - s[b];
        edge_sum += (t[a] - t[b]).cosh() + 0.5 * ds * ds * (t[a] + t[b]).exp();
    }
    let mut site_sum = 0.0;
    if params.h != 0.0 {
        for (j, (&tj, &sj)) in t.iter().zip(s).enumerate() {
            check_exponent(j, tj, "t")?;
            site_sum += tj.cosh() + 0.5 * sj * sj * tj.exp();
        }
    }
    let value = params.beta * edge_sum + params.h * site_sum;
    if !value.is_finite() {
        return Err(Error::Overflow {
            site: 0,
            what: "action is not finite".into(),
        });
    }
    Ok(value)
}

/// `e^{t_a + t_b}` for every edge, in edge order.
pub fn edge_weights(t: &[f64], lattice: &Lattice) -> Result<Vec<f64>> {
    lattice.check_len(t)?;
    lattice
        .edges()
        .iter()
        .map(|e| {
            let x = t[e.a] + t[e.b];
            check_exponent(e.a, x, "t_a + t_b")?;
            Ok(x.exp())
        })
        .collect()
}

/// `D(t)`: off-diagonal `-e^{t_i + t_j}` on edges, zero row sums.
pub fn build_d(t: &[f64], lattice: &Lattice) -> Result<SymmetricOperator> {
    let w = edge_weights(t, lattice)?;
    Ok(SymmetricOperator::from_edge_weights(lattice.num_sites(), lattice.edges(), &w, None))
}

/// Precision operator of the conditional Gaussian law of `s` given `t`.
///
/// Constrained ensemble: `βD(t)` grounded at the last site (dimension
/// `|Λ| - 1`). Massed ensemble: `βD(t) + h diag(e^t)`.
pub fn s_precision(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<SymmetricOperator> {
    let n = lattice.num_sites();
    let w: Vec<f64> = edge_weights(t, lattice)?
        .into_iter()
        .map(|x| params.beta * x)
        .collect();
    Ok(match params.ensemble {
        Ensemble::DeltaConstrained => {
            SymmetricOperator::grounded_from_edge_weights(n, lattice.edges(), &w, None)
        }
        Ensemble::HMassed => {
            let mass: Vec<f64> = t
                .iter()
                .enumerate()
                .map(|(j, &tj)| {
                    check_exponent(j, tj, "t")?;
                    Ok(params.h * tj.exp())
                })
                .collect::<Result<_>>()?;
            SymmetricOperator::from_edge_weights(n, lattice.edges(), &w, Some(&mass))
        }
    })
}

/// Factorized `s` precision together with the log-determinant term `C(t)`.
pub struct SPrecision {
    pub factor: Factorization,
    pub log_det_term: f64,
}

pub fn factor_s_precision(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<SPrecision> {
    let op = s_precision(t, params, lattice)?;
    let factor = op.factorize()?;
    let mut logdet = factor.logdet();
    if params.ensemble == Ensemble::DeltaConstrained {
        logdet += (lattice.num_sites() as f64).ln();
    }
    Ok(SPrecision {
        factor,
        log_det_term: 0.5 * logdet,
    })
}

/// The `t`-only part of the effective action:
/// `β Σ_<ij> cosh(t_i - t_j) + Σ_j (h cosh t_j - t_j)`.
pub fn local_action(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<f64> {
    lattice.check_len(t)?;
    for (j, &tj) in t.iter().enumerate() {
        check_exponent(j, tj, "t")?;
    }
    let coupling: f64 = lattice
        .edges()
        .iter()
        .map(|e| (t[e.a] - t[e.b]).cosh())
        .sum();
    let site: f64 = t.iter().map(|&tj| params.h * tj.cosh() - tj).sum();
    Ok(params.beta * coupling + site)
}

/// Marginal action `E(t)` of the `t` field (see module docs for constants).
pub fn effective_action(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<f64> {
    let local = local_action(t, params, lattice)?;
    let prec = factor_s_precision(t, params, lattice)?;
    Ok(local + prec.log_det_term)
}

/// Gradient of [`effective_action`].
///
/// Component `i` is `β Σ_{j∼i} sinh(t_i - t_j) + ⟨V_i⟩ - 1 + h sinh t_i`
/// where `V_i = ∂A/∂t_i` restricted to the `s`-dependent terms. With the
/// physical covariance `C` of `s`, `⟨V_i⟩ = (β/2) Σ_{j∼i} e^{t_i+t_j}
/// (C_ii + C_jj - 2C_ij)` plus `(h/2) e^{t_i} C_ii` in the massed ensemble.
pub fn grad_effective_action(t: &[f64], params: &ModelParams, lattice: &Lattice) -> Result<Vec<f64>> {
    let cov = crate::hessian::s_covariance(t, params, lattice)?;
    Ok(grad_with_covariance(t, params, lattice, &cov.matrix))
}

pub(crate) fn grad_with_covariance(
    t: &[f64],
    params: &ModelParams,
    lattice: &Lattice,
    cov: &nalgebra::DMatrix<f64>,
) -> Vec<f64> {
    let n = lattice.num_sites();
    let mut grad: Vec<f64> = t.iter().map(|&ti| params.h * ti.sinh() - 1.0).collect();
    for e in lattice.edges() {
        let (a, b) = (e.a, e.b);
        let sh = params.beta * (t[a] - t[b]).sinh();
        grad[a] += sh;
        grad[b] -= sh;
        let var = cov[(a, a)] + cov[(b, b)] - 2.0 * cov[(a, b)];
        let v = 0.5 * params.beta * (t[a] + t[b]).exp() * var;
        grad[a] += v;
        grad[b] += v;
    }
    if params.ensemble == Ensemble::HMassed {
        for i in 0..n {
            grad[i] += 0.5 * params.h * t[i].exp() * cov[(i, i)];
        }
    }
    grad
}
