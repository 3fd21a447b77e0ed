//! Gaussian band random matrices and the quantities that connect them to the
//! sigma model.
//!
//! The ensemble is fixed by its characteristic function
//! `⟨e^{i Tr HK}⟩ = exp(-½ Σ_ij J_ij Tr(Π_i K Π_j K))`, which is equivalent to
//! independent centred entries with `E|H_ab|² = J_{site(a), site(b)}`:
//! complex circular off the diagonal (`E H_ab² = 0`) and real on it. The
//! GUE-style density `exp(-Tr R²)` would halve every variance; this module
//! uses the covariance above throughout.
//!
//! Orbital `a` of an `N`-orbital matrix lives on site `a / N`.

use std::num::NonZeroUsize;

use gauss_quad::{GaussLaguerre, GaussLegendre};
use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{laplacian, Lattice};
use crate::sampler::{batch_means, jackknife, Estimate};

pub type Complex64 = Complex<f64>;

/// Variance profile families.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    /// `J = (-W²Δ + 1)⁻¹`.
    ExponentialW { w: f64 },
    /// `J0` within a cube of side `side`, `J1` between adjacent cubes, else 0.
    Cubes { side: usize, j0: f64, j1: f64 },
    Custom(DMatrix<f64>),
}

impl ProfileKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileKind::ExponentialW { .. } => "exponential_w",
            ProfileKind::Cubes { .. } => "cubes",
            ProfileKind::Custom(_) => "custom",
        }
    }
}

/// Variance matrix `J` of the band ensemble on a lattice.
pub fn build_j(kind: &ProfileKind, lattice: &Lattice) -> Result<DMatrix<f64>> {
    let n = lattice.num_sites();
    match kind {
        ProfileKind::ExponentialW { w } => {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams(format!("band width must be non-negative, got {w}")));
            }
            let mut m = laplacian(lattice).to_dense() * (w * w);
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            m.try_inverse()
                .ok_or_else(|| Error::InvalidParams("-W²Δ + 1 is singular".into()))
        }
        ProfileKind::Cubes { side, j0, j1 } => {
            if !(*j0 > 0.0 && *j1 >= 0.0 && j0.is_finite() && j1.is_finite()) {
                return Err(Error::InvalidParams(format!("need J0 > 0 and J1 ≥ 0, got {j0}, {j1}")));
            }
            let shape = lattice.shape();
            if *side == 0 || shape.side_lengths().iter().any(|l| l % side != 0) {
                return Err(Error::InvalidParams(format!(
                    "cube side {side} does not divide the lattice sides {:?}",
                    shape.side_lengths()
                )));
            }
            let coarse: Vec<usize> = shape.side_lengths().iter().map(|l| l / side).collect();
            let cube = |i: usize| -> Vec<usize> { shape.coordinates(i).iter().map(|c| c / side).collect() };
            let cubes: Vec<Vec<usize>> = (0..n).map(cube).collect();
            Ok(DMatrix::from_fn(n, n, |i, j| {
                let (a, b) = (&cubes[i], &cubes[j]);
                let mut differing = 0;
                let mut adjacent = true;
                for ((&x, &y), &m) in a.iter().zip(b).zip(&coarse) {
                    if x != y {
                        differing += 1;
                        adjacent &= (x + 1) % m == y || (y + 1) % m == x;
                    }
                }
                match differing {
                    0 => *j0,
                    1 if adjacent => *j1,
                    _ => 0.0,
                }
            }))
        }
        ProfileKind::Custom(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: m.nrows(),
                });
            }
            Ok(m.clone())
        }
    }
}

/// A band ensemble: lattice shape, orbitals per site, and variance profile.
#[derive(Debug, Clone)]
pub struct BandSpec {
    pub sides: Vec<usize>,
    pub orbitals: usize,
    pub j: DMatrix<f64>,
    pub kind: &'static str,
    /// Smallest eigenvalue of `J`; negative values violate positivity.
    pub j_min_eigenvalue: f64,
}

impl BandSpec {
    pub fn new(lattice: &Lattice, orbitals: usize, kind: &ProfileKind) -> Result<Self> {
        if orbitals == 0 {
            return Err(Error::InvalidParams("at least one orbital per site".into()));
        }
        let j = build_j(kind, lattice)?;
        Self::from_profile(lattice.shape().side_lengths().to_vec(), orbitals, j, kind.name())
    }

    /// One site carrying `N` orbitals with `E|H_ab|² = j0`: a GUE of size `N`.
    pub fn single_site(orbitals: usize, j0: f64) -> Result<Self> {
        if orbitals == 0 {
            return Err(Error::InvalidParams("at least one orbital per site".into()));
        }
        Self::from_profile(vec![1], orbitals, DMatrix::from_element(1, 1, j0), "single_site")
    }

    fn from_profile(sides: Vec<usize>, orbitals: usize, j: DMatrix<f64>, kind: &'static str) -> Result<Self> {
        let n = j.nrows();
        for a in 0..n {
            for b in 0..n {
                if !(j[(a, b)] >= 0.0 && j[(a, b)].is_finite()) {
                    return Err(Error::InvalidParams(format!("J[{a},{b}] = {} is not a finite non-negative number", j[(a, b)])));
                }
                if (j[(a, b)] - j[(b, a)]).abs() > 1e-12 * j[(a, b)].abs().max(1.0) {
                    return Err(Error::InvalidParams(format!("J is not symmetric at ({a},{b})")));
                }
            }
        }
        let j_min_eigenvalue = SymmetricEigen::new(j.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if j_min_eigenvalue < -1e-12 {
            log::warn!("variance profile is not positive semidefinite (λ_min = {j_min_eigenvalue:e})");
        }
        Ok(Self {
            sides,
            orbitals,
            j,
            kind,
            j_min_eigenvalue,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.j.nrows()
    }

    pub fn dim(&self) -> usize {
        self.orbitals * self.j.nrows()
    }

    /// `E|H_ab|²`.
    pub fn variance(&self, a: usize, b: usize) -> f64 {
        self.j[(a / self.orbitals, b / self.orbitals)]
    }
}

/// One draw of `H`.
pub fn sample_h<R: Rng>(spec: &BandSpec, rng: &mut R) -> DMatrix<Complex64> {
    let n = spec.dim();
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for a in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        h[(a, a)] = Complex64::new(spec.variance(a, a).sqrt() * x, 0.0);
        for b in a + 1..n {
            let s = (0.5 * spec.variance(a, b)).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(s * re, s * im);
            h[(a, b)] = z;
            h[(b, a)] = z.conj();
        }
    }
    h
}

/// Local density of states and squared resolvent at one energy.
#[derive(Debug, Clone, Serialize)]
pub struct ResolventStats {
    pub energy: f64,
    pub epsilon: f64,
    pub x: usize,
    pub y: usize,
    /// `π⁻¹ Im ⟨G(x,x)⟩`, orbital-averaged.
    pub density: Estimate,
    /// `⟨|G(x,y)|²⟩`, orbital-averaged.
    pub abs_sq: Estimate,
    /// Largest `ε ‖G‖` over all draws; at most 1.
    pub max_norm_times_epsilon: f64,
    pub max_condition: f64,
}

/// Condition estimates above this abort a resolvent solve.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e13;

fn largest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// `G = (H - E - iε)⁻¹` by LU, with its norm and a condition estimate.
fn resolvent(h: &DMatrix<Complex64>, energy: f64, epsilon: f64) -> Result<(DMatrix<Complex64>, f64, f64)> {
    let n = h.nrows();
    let mut a = h.clone();
    for i in 0..n {
        a[(i, i)] -= Complex64::new(energy, epsilon);
    }
    let norm_a = largest_singular_value(&a);
    let g = a.lu().try_inverse().ok_or(Error::NearSingular { condition: f64::INFINITY })?;
    let norm_g = largest_singular_value(&g);
    let condition = norm_a * norm_g;
    if condition > NEAR_SINGULAR_CONDITION || !condition.is_finite() {
        return Err(Error::NearSingular { condition });
    }
    Ok((g, norm_g, condition))
}

pub fn resolvent_stats<R: Rng>(
    spec: &BandSpec,
    energy: f64,
    epsilon: f64,
    x: usize,
    y: usize,
    draws: usize,
    rng: &mut R,
) -> Result<ResolventStats> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    let sites = spec.num_sites();
    if x >= sites || y >= sites {
        return Err(Error::InvalidParams(format!("sites ({x}, {y}) outside a lattice of {sites}")));
    }
    if draws < 4 {
        return Err(Error::InvalidParams("at least 4 draws".into()));
    }
    let no = spec.orbitals;
    let mut dens = Vec::with_capacity(draws);
    let mut sq = Vec::with_capacity(draws);
    let mut max_norm = 0.0f64;
    let mut max_cond = 0.0f64;
    for _ in 0..draws {
        let h = sample_h(spec, rng);
        let (g, norm, cond) = resolvent(&h, energy, epsilon)?;
        max_norm = max_norm.max(norm * epsilon);
        max_cond = max_cond.max(cond);
        let diag: f64 = (0..no).map(|k| g[(x * no + k, x * no + k)].im).sum::<f64>() / no as f64;
        dens.push(diag / std::f64::consts::PI);
        let mut s = 0.0;
        for a in 0..no {
            for b in 0..no {
                s += g[(x * no + a, y * no + b)].norm_sqr();
            }
        }
        sq.push(s / (no * no) as f64);
    }
    Ok(ResolventStats {
        energy,
        epsilon,
        x,
        y,
        density: batch_means(&dens),
        abs_sq: batch_means(&sq),
        max_norm_times_epsilon: max_norm,
        max_condition: max_cond,
    })
}

/// Ratio estimate of the determinant-deformed squared Green's function.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DeformedAverage {
    pub estimate: Estimate,
    /// `(Σ w)² / Σ w²` for the weights `|Det(H - E + iε)|⁻²`.
    pub ess: f64,
    pub ess_fraction: f64,
}

/// Effective sample fraction below which the deformed average aborts.
pub const MIN_DEFORMED_ESS: f64 = 0.01;

/// `B¹_ℓ = ⟨|Tr G Π_ℓ|² |Det|⁻²⟩ / ⟨|Det|⁻²⟩` with `G = (H - E + iε)⁻¹`,
/// by importance weighting of draws from the undeformed ensemble.
pub fn deformed_average_b1<R: Rng>(
    spec: &BandSpec,
    energy: f64,
    epsilon: f64,
    site: usize,
    draws: usize,
    rng: &mut R,
) -> Result<DeformedAverage> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    if site >= spec.num_sites() {
        return Err(Error::InvalidParams(format!("site {site} outside the lattice")));
    }
    if draws < 16 {
        return Err(Error::InvalidParams("at least 16 draws".into()));
    }
    let no = spec.orbitals;
    let mut log_w = Vec::with_capacity(draws);
    let mut obs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let h = sample_h(spec, rng);
        let eig = SymmetricEigen::new(h);
        let mut lw = 0.0;
        let mut tr = Complex64::new(0.0, 0.0);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let z = Complex64::new(lam - energy, epsilon);
            lw -= z.norm_sqr().ln();
            let overlap: f64 = (0..no).map(|a| eig.eigenvectors[(site * no + a, k)].norm_sqr()).sum();
            tr += overlap / z;
        }
        log_w.push(lw);
        obs.push(tr.norm_sqr());
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let ess = sw * sw / w.iter().map(|x| x * x).sum::<f64>();
    let ess_fraction = ess / draws as f64;
    if ess_fraction < MIN_DEFORMED_ESS {
        return Err(Error::LowEffectiveSampleSize {
            ess,
            required: MIN_DEFORMED_ESS * draws as f64,
            hint: "determinant weights are too uneven; raise epsilon or shrink N|Λ|",
        });
    }
    let fw: Vec<f64> = obs.iter().zip(&w).map(|(a, b)| a * b).collect();
    Ok(DeformedAverage {
        estimate: jackknife(&[&fw, &w], |m| m[0] / m[1]),
        ess,
        ess_fraction,
    })
}

/// Mean-field density and the sigma-model couplings it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleParams {
    pub rho: f64,
    pub beta: f64,
    pub h: f64,
}

/// `ρ = √(4NJ₀ - E²) / (2J₀)`, `β = 2J₁ρ²`, `h = 2ερ`.
pub fn saddle_params(orbitals: usize, j0: f64, j1: f64, energy: f64, epsilon: f64) -> Result<SaddleParams> {
    if !(j0 > 0.0 && j1 >= 0.0 && epsilon >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "need J0 > 0, J1 ≥ 0, ε ≥ 0; got {j0}, {j1}, {epsilon}"
        )));
    }
    let edge = 4.0 * orbitals as f64 * j0;
    let disc = edge - energy * energy;
    if disc < 0.0 {
        return Err(Error::OutsideBand { energy, edge });
    }
    let rho = disc.sqrt() / (2.0 * j0);
    Ok(SaddleParams {
        rho,
        beta: 2.0 * j1 * rho * rho,
        h: 2.0 * epsilon * rho,
    })
}

/// `F(M) = (Tr M)^a (Det M)^b e^{-rate Tr M}` on positive Hermitian matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunction {
    pub trace_power: u32,
    pub det_power: u32,
    pub rate: f64,
}

impl TestFunction {
    pub fn new(trace_power: u32, det_power: u32, rate: f64) -> Self {
        Self {
            trace_power,
            det_power,
            rate,
        }
    }

    pub fn name(&self) -> String {
        format!("tr^{}det^{}exp(-{}tr)", self.trace_power, self.det_power, self.rate)
    }

    /// Polynomial prefactor in terms of the eigenvalues.
    fn poly(&self, eig: &[f64]) -> f64 {
        let tr: f64 = eig.iter().sum();
        let det: f64 = eig.iter().product();
        tr.powi(self.trace_power as i32) * det.powi(self.det_power as i32)
    }

    fn check(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::NonIntegrable(format!(
                "{} does not decay along Tr M → ∞",
                self.name()
            )));
        }
        Ok(())
    }
}

/// One test function of a push-forward check.
#[derive(Debug, Clone, Serialize)]
pub struct PushforwardRow {
    pub function: String,
    /// `∫ F(φ*φ) dφ dφ̄` by Gaussian Monte Carlo.
    pub lhs: Estimate,
    /// `∫ F(λ) Π_{i<j}(λ_i - λ_j)² Π λ_k^{N-n} dλ` by Gauss–Laguerre.
    pub rhs: f64,
    pub ratio: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct PushforwardReport {
    pub n: usize,
    pub big_n: usize,
    pub rows: Vec<PushforwardRow>,
    /// Largest pairwise `|r_k - r_l| / σ_kl` among the ratios.
    pub max_pairwise_z: f64,
}

impl PushforwardReport {
    pub fn constant_within(&self, z: f64) -> bool {
        self.max_pairwise_z <= z
    }
}

/// Eigenvalues of the `n × n` Gram matrix `φ*φ` for `n ∈ {1, 2}`.
fn gram_eigenvalues(phi: &[Complex64], n: usize, big_n: usize) -> Vec<f64> {
    let col = |k: usize| &phi[k * big_n..(k + 1) * big_n];
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>();
    if n == 1 {
        return vec![col(0).iter().map(|z| z.norm_sqr()).sum()];
    }
    let m11 = dot(col(0), col(0)).re;
    let m22 = dot(col(1), col(1)).re;
    let m12 = dot(col(0), col(1));
    let half_tr = 0.5 * (m11 + m22);
    let r = (0.25 * (m11 - m22).powi(2) + m12.norm_sqr()).sqrt();
    vec![half_tr + r, half_tr - r]
}

/// Checks that `φ ↦ φ*φ` pushes `dφ dφ̄` to `c_{n,N} Det^{N-n}(M) dM`.
///
/// Conventions: `dφ dφ̄` is the product of `d Re d Im` over the `nN` entries;
/// for `n = 1`, `dM = dλ`, so the ratio is `π^N / Γ(N)`. For `n = 2` the
/// eigenvalue integral omits the unitary volume, which only rescales the
/// constant. Each test function uses its own draws, so the ratios are
/// independent and the pairwise comparison is honest.
pub fn pushforward_check<R: Rng>(
    n: usize,
    big_n: usize,
    functions: &[TestFunction],
    draws: usize,
    rng: &mut R,
) -> Result<PushforwardReport> {
    if !(n == 1 || n == 2) || big_n < n {
        return Err(Error::InvalidParams(format!("need n ∈ {{1, 2}} and N ≥ n, got n = {n}, N = {big_n}")));
    }
    if draws < 16 {
        return Err(Error::InvalidParams("at least 16 draws".into()));
    }
    let mut rows = Vec::with_capacity(functions.len());
    for f in functions {
        f.check()?;
        // φ entries with density (q/π)^{nN} e^{-q |φ|²}, q = rate/2, so the
        // estimator F(φ*φ) e^{q Tr} / density is never constant.
        let q = 0.5 * f.rate;
        let sd = (0.5 / q).sqrt();
        let norm = (std::f64::consts::PI / q).powi((n * big_n) as i32);
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let phi: Vec<Complex64> = (0..n * big_n)
                    .map(|_| Complex64::new(sd * rng.sample::<f64, _>(StandardNormal), sd * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let eig = gram_eigenvalues(&phi, n, big_n);
                let tr: f64 = eig.iter().sum();
                norm * f.poly(&eig) * (-q * tr).exp()
            })
            .collect();
        let lhs = batch_means(&vals);
        let rhs = eigenvalue_integral(f, n, big_n);
        let ratio = Estimate {
            mean: lhs.mean / rhs,
            std_error: lhs.std_error / rhs,
            ..lhs
        };
        rows.push(PushforwardRow {
            function: f.name(),
            lhs,
            rhs,
            ratio,
        });
    }
    let mut max_pairwise_z = 0.0f64;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            max_pairwise_z = max_pairwise_z.max(rows[i].ratio.z_score(&rows[j].ratio));
        }
    }
    Ok(PushforwardReport {
        n,
        big_n,
        rows,
        max_pairwise_z,
    })
}

fn laguerre(nodes: usize) -> GaussLaguerre {
    GaussLaguerre::new(NonZeroUsize::new(nodes).expect("nodes > 0"), 0.0.try_into().expect("alpha = 0"))
}

/// `∫_{R+^n} F(λ) Π_{i<j}(λ_i - λ_j)² Π λ_k^{N-n} dλ`. The integrand is a
/// polynomial times `e^{-rate Σλ}`, so a Laguerre rule of sufficient degree
/// is exact.
fn eigenvalue_integral(f: &TestFunction, n: usize, big_n: usize) -> f64 {
    let degree = (f.trace_power + n as u32 * f.det_power) as usize + n * (big_n - n) + 2 * (n - 1);
    let rule = laguerre(degree / 2 + 2);
    let r = f.rate;
    let extra = (big_n - n) as i32;
    if n == 1 {
        return rule.integrate(|x| {
            let l = x / r;
            f.poly(&[l]) * l.powi(extra)
        }) / r;
    }
    rule.integrate(|x| {
        rule.integrate(|y| {
            let (a, b) = (x / r, y / r);
            f.poly(&[a, b]) * (a - b).powi(2) * (a * b).powi(extra)
        })
    }) / (r * r)
}

/// Composite Gauss–Legendre rule on `[a, b]`.
pub fn integrate_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize, degree: usize) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree).expect("degree > 0"));
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * width;
            rule.integrate(lo, lo + width, &mut f)
        })
        .sum()
}
