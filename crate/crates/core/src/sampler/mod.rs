//! Exact Gaussian draws of `s` given `t` and Markov chains on `t` whose
//! stationary law is `e^{-E(t)}`.
//!
//! Two kernels are provided:
//!
//! * [`Kernel::GibbsAlternating`] works on the joint `(t, s)` law. A sweep
//!   updates every `t_i` by random-walk Metropolis with `s` held fixed, then
//!   applies a global dilation `(t, s) → (t + γ, e^{-γ} s)`, then redraws `s`
//!   exactly from its conditional Gaussian. One factorization per sweep.
//! * [`Kernel::MarginalLangevin`] is Metropolis-adjusted Langevin on `E(t)`
//!   followed by the same global shift of `t`. Dense storage only.
//!
//! The dilation is an exact symmetry of the `β` terms and of the measure
//! `Π e^{t_j} dt_j ds_j`, so only the `h` terms and the Jacobian of the
//! constrained `s` slice enter its acceptance. It moves the soft zero mode
//! that local updates explore only diffusively.
//!
//! Step sizes adapt during burn-in and are frozen afterwards. The generator is
//! `ChaCha8Rng::seed_from_u64(seed)`; chain `k` of a multi-chain run uses
//! stream `k` of that seed.

pub mod stats;

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::covariance_from_inverse;
use crate::lattice::Lattice;
use crate::linalg::{Factorization, Storage};
use crate::model::{edge_weights, effective_action, grad_with_covariance, s_precision, Ensemble, ModelParams};

pub use stats::{batch_means, integrated_autocorr_time, jackknife, merge, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    GibbsAlternating,
    MarginalLangevin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total sweeps including burn-in.
    pub num_sweeps: usize,
    pub burn_in: usize,
    /// Initial per-site (Gibbs) or Langevin step size.
    pub step_size: f64,
    pub seed: u64,
    pub kernel: Kernel,
    pub thin: usize,
    /// Initial standard deviation of the global shift.
    pub global_step: f64,
    /// Keep the recorded `t` configurations.
    pub keep_samples: bool,
    /// Number of site proposals to log after burn-in.
    pub log_proposals: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            num_sweeps: 10_000,
            burn_in: 1_000,
            step_size: 0.5,
            seed: 1,
            kernel: Kernel::GibbsAlternating,
            thin: 1,
            global_step: 0.5,
            keep_samples: false,
            log_proposals: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.burn_in >= self.num_sweeps {
            errs.push(format!("burn_in ({}) must be below num_sweeps ({})", self.burn_in, self.num_sweeps));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            errs.push(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.global_step >= 0.0 && self.global_step.is_finite()) {
            errs.push(format!("global_step must be non-negative, got {}", self.global_step));
        }
        if self.thin == 0 {
            errs.push("thin must be at least 1".into());
        }
        if (self.num_sweeps.saturating_sub(self.burn_in)) / self.thin.max(1) < 16 {
            errs.push("fewer than 16 recorded sweeps".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn recorded(&self) -> usize {
        (self.num_sweeps - self.burn_in) / self.thin
    }
}

/// Per-sweep scalar observables. Site averages are used wherever
/// translation invariance makes them equal in law to the site-0 value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "arg")]
pub enum Observable {
    /// `h Σ_j sinh t_j`.
    WardSum,
    /// `|Λ|⁻¹ Σ_j sinh t_j`.
    MeanSinh,
    /// `|Λ|⁻¹ Σ_j t_j`.
    MeanT,
    /// `t_0`.
    T0,
    /// `|Λ|⁻¹ Σ_j e^{α t_j}`.
    MeanExpT(f64),
    /// `(Tr σ₃ S_j)²` with `s_j` integrated analytically, site-averaged.
    Theorem1,
    /// `(2 cosh t_j + s_j² e^{t_j})²` from the sampled `s`, site-averaged.
    Theorem1Raw,
    /// `3 C_jj²`, site-averaged.
    SFourthWick,
    /// `s_j⁴` from the sampled `s`, site-averaged.
    SFourthRaw,
    /// `C_jj^k`, site-averaged.
    CovDiagPow(u32),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::WardSum => "ward_sum".into(),
            Observable::MeanSinh => "mean_sinh_t".into(),
            Observable::MeanT => "mean_t".into(),
            Observable::T0 => "t0".into(),
            Observable::MeanExpT(a) => format!("mean_exp_t[{a}]"),
            Observable::Theorem1 => "trace_sq".into(),
            Observable::Theorem1Raw => "trace_sq_raw".into(),
            Observable::SFourthWick => "s4_wick".into(),
            Observable::SFourthRaw => "s4_raw".into(),
            Observable::CovDiagPow(k) => format!("cov00_pow[{k}]"),
        }
    }

    fn needs_covariance(&self) -> bool {
        matches!(self, Observable::Theorem1 | Observable::SFourthWick | Observable::CovDiagPow(_))
    }

    fn evaluate(&self, t: &[f64], s: &[f64], cov_diag: &[f64], h: f64) -> f64 {
        let n = t.len() as f64;
        let avg = |f: &dyn Fn(usize) -> f64| (0..t.len()).map(f).sum::<f64>() / n;
        match *self {
            Observable::WardSum => h * t.iter().map(|x| x.sinh()).sum::<f64>(),
            Observable::MeanSinh => avg(&|j| t[j].sinh()),
            Observable::MeanT => avg(&|j| t[j]),
            Observable::T0 => t[0],
            Observable::MeanExpT(a) => avg(&|j| (a * t[j]).exp()),
            Observable::Theorem1 => avg(&|j| trace_sq_integrated(t[j], cov_diag[j])),
            Observable::Theorem1Raw => avg(&|j| (2.0 * t[j].cosh() + s[j] * s[j] * t[j].exp()).powi(2)),
            Observable::SFourthWick => avg(&|j| 3.0 * cov_diag[j] * cov_diag[j]),
            Observable::SFourthRaw => avg(&|j| s[j].powi(4)),
            Observable::CovDiagPow(k) => avg(&|j| cov_diag[j].powi(k as i32)),
        }
    }
}

/// `⟨(2 cosh t + s² e^t)²⟩` over `s ~ N(0, c)`.
pub fn trace_sq_integrated(t: f64, c: f64) -> f64 {
    let ch = t.cosh();
    let et = t.exp();
    4.0 * ch * ch + 4.0 * ch * et * c + 3.0 * et * et * c * c
}

/// Exact draw of `s` from its conditional Gaussian given `t`.
///
/// Perturbation sampling: `r = Σ_e √(β w_e) ξ_e (δ_a - δ_b) + √(h e^t) η`
/// has covariance equal to the precision `A`, so `A⁻¹ r ~ N(0, A⁻¹)`.
pub fn sample_s_given_t<R: Rng>(t: &[f64], params: &ModelParams, lattice: &Lattice, rng: &mut R) -> Result<Vec<f64>> {
    Ok(draw_s(t, params, lattice, rng)?.0)
}

fn draw_s<R: Rng>(t: &[f64], params: &ModelParams, lattice: &Lattice, rng: &mut R) -> Result<(Vec<f64>, Factorization)> {
    let n = lattice.num_sites();
    let factor = s_precision(t, params, lattice)?.factorize()?;
    let w = edge_weights(t, lattice)?;
    let mut r = vec![0.0; n];
    for (e, we) in lattice.edges().iter().zip(&w) {
        let x = (params.beta * we).sqrt() * rng.sample::<f64, _>(StandardNormal);
        r[e.a] += x;
        r[e.b] -= x;
    }
    if params.ensemble == Ensemble::HMassed {
        for (rj, tj) in r.iter_mut().zip(t) {
            *rj += (params.h * tj.exp()).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let s = match params.ensemble {
        Ensemble::HMassed => factor.solve(&r),
        Ensemble::DeltaConstrained => {
            let mut s = factor.solve(&r[..n - 1]);
            s.push(0.0);
            let mean = s.iter().sum::<f64>() / n as f64;
            s.iter_mut().for_each(|x| *x -= mean);
            s
        }
    };
    Ok((s, factor))
}

fn covariance_diagonal(factor: &Factorization, ensemble: Ensemble, n: usize) -> Result<Vec<f64>> {
    let inv = factor.inverse()?;
    let c = covariance_from_inverse(inv, ensemble, n);
    Ok(c.diagonal().as_slice().to_vec())
}

/// Acceptance counters of one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub local_accepted: usize,
    pub local_proposed: usize,
    pub global_accepted: usize,
    pub global_proposed: usize,
}

impl StepStats {
    fn add(&mut self, o: &StepStats) {
        self.local_accepted += o.local_accepted;
        self.local_proposed += o.local_proposed;
        self.global_accepted += o.global_accepted;
        self.global_proposed += o.global_proposed;
    }

    pub fn accepted(&self) -> bool {
        self.local_accepted + self.global_accepted > 0
    }

    pub fn local_rate(&self) -> f64 {
        self.local_accepted as f64 / self.local_proposed.max(1) as f64
    }

    pub fn global_rate(&self) -> f64 {
        self.global_accepted as f64 / self.global_proposed.max(1) as f64
    }
}

/// A logged single-site proposal of the Gibbs kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub site: usize,
    pub proposed: f64,
    pub log_ratio: f64,
    pub accepted: bool,
}

/// Mutable chain state.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub step_size: f64,
    pub global_step: f64,
}

impl ChainState {
    pub fn new(t: Vec<f64>, s: Vec<f64>, cfg: &ChainConfig) -> Self {
        Self {
            t,
            s,
            step_size: cfg.step_size,
            global_step: cfg.global_step,
        }
    }
}

struct Context<'a> {
    params: ModelParams,
    lattice: &'a Lattice,
    neighbors: Vec<Vec<usize>>,
}

impl<'a> Context<'a> {
    fn new(params: &ModelParams, lattice: &'a Lattice) -> Self {
        Self {
            params: *params,
            lattice,
            neighbors: (0..lattice.num_sites()).map(|i| lattice.neighbors(i).collect()).collect(),
        }
    }

    /// Change of the joint action when `t_i` moves to `new`, `s` fixed.
    fn local_delta(&self, t: &[f64], s: &[f64], i: usize, new: f64) -> f64 {
        let p = &self.params;
        let old = t[i];
        let (e_new, e_old) = (new.exp(), old.exp());
        let mut d = 0.0;
        for &j in &self.neighbors[i] {
            let ds = s[i] - s[j];
            d += (new - t[j]).cosh() - (old - t[j]).cosh() + 0.5 * ds * ds * t[j].exp() * (e_new - e_old);
        }
        d *= p.beta;
        d += p.h * (new.cosh() - old.cosh()) - (new - old);
        if p.ensemble == Ensemble::HMassed {
            d += 0.5 * p.h * s[i] * s[i] * (e_new - e_old);
        }
        d
    }

    /// Log acceptance ratio of the dilation `(t, s) → (t + γ, e^{-γ} s)`.
    fn dilation_log_ratio(&self, t: &[f64], s: &[f64], gamma: f64) -> f64 {
        let p = &self.params;
        let dh: f64 = t.iter().map(|&x| (x + gamma).cosh() - x.cosh()).sum();
        match p.ensemble {
            Ensemble::DeltaConstrained => -p.h * dh + gamma,
            Ensemble::HMassed => {
                let mass: f64 = t.iter().zip(s).map(|(&x, &y)| y * y * x.exp()).sum();
                -p.h * dh - 0.5 * p.h * mass * ((-gamma).exp() - 1.0)
            }
        }
    }
}

fn accept<R: Rng>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
}

fn gibbs_sweep<R: Rng>(
    ctx: &Context,
    state: &mut ChainState,
    rng: &mut R,
    log: Option<&mut Vec<ProposalRecord>>,
    log_limit: usize,
) -> Result<(StepStats, Factorization)> {
    let mut stats = StepStats::default();
    let n = state.t.len();
    let mut log = log;
    for i in 0..n {
        let proposed = state.t[i] + state.step_size * rng.sample::<f64, _>(StandardNormal);
        let log_ratio = -ctx.local_delta(&state.t, &state.s, i, proposed);
        let ok = accept(log_ratio, rng);
        if let Some(l) = log.as_deref_mut() {
            if l.len() < log_limit {
                l.push(ProposalRecord {
                    t: state.t.clone(),
                    s: state.s.clone(),
                    site: i,
                    proposed,
                    log_ratio,
                    accepted: ok,
                });
            }
        }
        stats.local_proposed += 1;
        if ok {
            state.t[i] = proposed;
            stats.local_accepted += 1;
        }
    }
    if state.global_step > 0.0 {
        let gamma = state.global_step * rng.sample::<f64, _>(StandardNormal);
        stats.global_proposed += 1;
        if accept(ctx.dilation_log_ratio(&state.t, &state.s, gamma), rng) {
            state.t.iter_mut().for_each(|x| *x += gamma);
            let f = (-gamma).exp();
            state.s.iter_mut().for_each(|x| *x *= f);
            stats.global_accepted += 1;
        }
    }
    let (s, factor) = draw_s(&state.t, &ctx.params, ctx.lattice, rng)?;
    state.s = s;
    Ok((stats, factor))
}

/// Cached marginal quantities at the current Langevin state.
struct LangevinPoint {
    energy: f64,
    grad: Vec<f64>,
}

fn langevin_point(t: &[f64], ctx: &Context) -> Result<LangevinPoint> {
    let cov = crate::hessian::s_covariance(t, &ctx.params, ctx.lattice)?;
    let energy = effective_action(t, &ctx.params, ctx.lattice)?;
    Ok(LangevinPoint {
        energy,
        grad: grad_with_covariance(t, &ctx.params, ctx.lattice, &cov.matrix),
    })
}

fn langevin_step<R: Rng>(ctx: &Context, state: &mut ChainState, point: &mut LangevinPoint, rng: &mut R) -> Result<StepStats> {
    let mut stats = StepStats::default();
    let eps = state.step_size;
    let half = 0.5 * eps * eps;
    let proposal: Vec<f64> = state
        .t
        .iter()
        .zip(&point.grad)
        .map(|(x, g)| x - half * g + eps * rng.sample::<f64, _>(StandardNormal))
        .collect();
    stats.local_proposed += 1;
    // A proposal outside the representable range has zero density.
    if let Ok(next) = langevin_point(&proposal, ctx) {
        let fwd: f64 = proposal
            .iter()
            .zip(&state.t)
            .zip(&point.grad)
            .map(|((y, x), g)| (y - x + half * g).powi(2))
            .sum();
        let bwd: f64 = state
            .t
            .iter()
            .zip(&proposal)
            .zip(&next.grad)
            .map(|((x, y), g)| (x - y + half * g).powi(2))
            .sum();
        let log_ratio = point.energy - next.energy + (fwd - bwd) / (4.0 * half);
        if accept(log_ratio, rng) {
            state.t = proposal;
            *point = next;
            stats.local_accepted += 1;
        }
    }
    if state.global_step > 0.0 {
        let gamma = state.global_step * rng.sample::<f64, _>(StandardNormal);
        stats.global_proposed += 1;
        let shifted: Vec<f64> = state.t.iter().map(|x| x + gamma).collect();
        if let Ok(next) = langevin_point(&shifted, ctx) {
            if accept(point.energy - next.energy, rng) {
                state.t = shifted;
                *point = next;
                stats.global_accepted += 1;
            }
        }
    }
    Ok(stats)
}

/// One transition of the chain on `t`.
///
/// For the Gibbs kernel `s` is drawn fresh from its conditional law first,
/// so the result depends on `t` only.
pub fn mcmc_step_t<R: Rng>(
    t: &[f64],
    params: &ModelParams,
    lattice: &Lattice,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, StepStats)> {
    lattice.check_len(t)?;
    let ctx = Context::new(params, lattice);
    match cfg.kernel {
        Kernel::GibbsAlternating => {
            let s = sample_s_given_t(t, params, lattice, rng)?;
            let mut state = ChainState::new(t.to_vec(), s, cfg);
            let (stats, _) = gibbs_sweep(&ctx, &mut state, rng, None, 0)?;
            Ok((state.t, stats))
        }
        Kernel::MarginalLangevin => {
            let mut state = ChainState::new(t.to_vec(), vec![0.0; t.len()], cfg);
            let mut point = langevin_point(t, &ctx)?;
            let stats = langevin_step(&ctx, &mut state, &mut point, rng)?;
            Ok((state.t, stats))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableSummary {
    pub name: String,
    pub estimate: Estimate,
    pub autocorr_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub local_acceptance: f64,
    pub global_acceptance: f64,
    pub step_size: f64,
    pub global_step: f64,
    pub recorded: usize,
}

/// Everything a chain produces.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub observables: Vec<Observable>,
    pub summaries: Vec<ObservableSummary>,
    /// `series[k][m]`: observable `k` at recorded sweep `m`.
    pub series: Vec<Vec<f64>>,
    /// Sweep index, `t_0` and `Σ_j sinh t_j` at each recorded sweep.
    pub trace: Vec<(usize, f64, f64)>,
    /// Recorded `t` configurations if requested.
    pub samples: Vec<Vec<f64>>,
    pub proposals: Vec<ProposalRecord>,
    pub diagnostics: ChainDiagnostics,
}

impl ChainOutput {
    pub fn estimate(&self, obs: Observable) -> Option<Estimate> {
        self.observables
            .iter()
            .position(|o| *o == obs)
            .map(|k| self.summaries[k].estimate)
    }

    pub fn series_of(&self, obs: Observable) -> Option<&[f64]> {
        self.observables.iter().position(|o| *o == obs).map(|k| self.series[k].as_slice())
    }

    /// CSV trace with columns `sweep,t0,sum_sinh_t,<observables…>`.
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let names: Vec<String> = self.observables.iter().map(|o| o.name()).collect();
        writeln!(out, "sweep,t0,sum_sinh_t{}", names.iter().map(|n| format!(",{n}")).collect::<String>())?;
        for (m, (sweep, t0, sh)) in self.trace.iter().enumerate() {
            write!(out, "{sweep},{t0:.15e},{sh:.15e}")?;
            for s in &self.series {
                write!(out, ",{:.15e}", s[m])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn tune(step: &mut f64, rate: f64, target: f64) {
    *step *= (2.0 * (rate - target)).exp();
    *step = step.clamp(1e-4, 50.0);
}

const TUNE_WINDOW: usize = 50;
const LOCAL_TARGET: f64 = 0.55;
const GLOBAL_TARGET: f64 = 0.5;
const LANGEVIN_TARGET: f64 = 0.57;

/// Runs one chain from `t = 0`, `s = 0` on stream 0 of the seed.
pub fn run_chain(params: &ModelParams, lattice: &Lattice, cfg: &ChainConfig, observables: &[Observable]) -> Result<ChainOutput> {
    run_chain_on_stream(params, lattice, cfg, observables, 0)
}

pub fn run_chain_on_stream(
    params: &ModelParams,
    lattice: &Lattice,
    cfg: &ChainConfig,
    observables: &[Observable],
    stream: u64,
) -> Result<ChainOutput> {
    params.validate()?;
    cfg.validate()?;
    let n = lattice.num_sites();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let ctx = Context::new(params, lattice);
    let need_cov = observables.iter().any(|o| o.needs_covariance());
    if (need_cov || cfg.kernel == Kernel::MarginalLangevin) && Storage::for_sites(n) == Storage::Sparse {
        return Err(Error::TooLarge {
            op: "covariance observables and the Langevin kernel",
            sites: n,
            limit: crate::linalg::DENSE_SITE_LIMIT,
        });
    }

    let mut state = ChainState::new(vec![0.0; n], vec![0.0; n], cfg);
    state.s = sample_s_given_t(&state.t, params, lattice, &mut rng)?;
    let mut point = match cfg.kernel {
        Kernel::MarginalLangevin => Some(langevin_point(&state.t, &ctx)?),
        Kernel::GibbsAlternating => None,
    };

    let mut series = vec![Vec::with_capacity(cfg.recorded()); observables.len()];
    let mut trace = Vec::with_capacity(cfg.recorded());
    let mut samples = Vec::new();
    let mut proposals = Vec::new();
    let mut window = StepStats::default();
    let mut totals = StepStats::default();
    let mut cov_diag = vec![0.0; n];

    for sweep in 0..cfg.num_sweeps {
        let burning = sweep < cfg.burn_in;
        let record = !burning && (sweep - cfg.burn_in) % cfg.thin == cfg.thin - 1;
        let stats = match cfg.kernel {
            Kernel::GibbsAlternating => {
                let log = if burning || cfg.log_proposals == 0 { None } else { Some(&mut proposals) };
                let (stats, factor) = gibbs_sweep(&ctx, &mut state, &mut rng, log, cfg.log_proposals)?;
                if record && need_cov {
                    cov_diag = covariance_diagonal(&factor, params.ensemble, n)?;
                }
                stats
            }
            Kernel::MarginalLangevin => {
                let p = point.as_mut().expect("langevin state");
                let stats = langevin_step(&ctx, &mut state, p, &mut rng)?;
                if record {
                    let (s, factor) = draw_s(&state.t, params, lattice, &mut rng)?;
                    state.s = s;
                    if need_cov {
                        cov_diag = covariance_diagonal(&factor, params.ensemble, n)?;
                    }
                }
                stats
            }
        };
        if burning {
            window.add(&stats);
            if (sweep + 1) % TUNE_WINDOW == 0 {
                let target = match cfg.kernel {
                    Kernel::GibbsAlternating => LOCAL_TARGET,
                    Kernel::MarginalLangevin => LANGEVIN_TARGET,
                };
                tune(&mut state.step_size, window.local_rate(), target);
                if window.global_proposed > 0 {
                    tune(&mut state.global_step, window.global_rate(), GLOBAL_TARGET);
                }
                window = StepStats::default();
            }
            continue;
        }
        totals.add(&stats);
        if record {
            for (k, obs) in observables.iter().enumerate() {
                let v = obs.evaluate(&state.t, &state.s, &cov_diag, params.h);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        observable: obs.name(),
                        sweep,
                    });
                }
                series[k].push(v);
            }
            let sum_sinh: f64 = state.t.iter().map(|x| x.sinh()).sum();
            trace.push((sweep, state.t[0], sum_sinh));
            if cfg.keep_samples {
                samples.push(state.t.clone());
            }
        }
    }

    let summaries = observables
        .iter()
        .zip(&series)
        .map(|(o, xs)| ObservableSummary {
            name: o.name(),
            estimate: batch_means(xs),
            autocorr_time: integrated_autocorr_time(xs),
        })
        .collect();
    Ok(ChainOutput {
        observables: observables.to_vec(),
        summaries,
        series,
        trace,
        samples,
        proposals,
        diagnostics: ChainDiagnostics {
            local_acceptance: totals.local_rate(),
            global_acceptance: totals.global_rate(),
            step_size: state.step_size,
            global_step: state.global_step,
            recorded: cfg.recorded(),
        },
    })
}

/// Independent chains on streams `0..chains`, run in parallel.
pub fn run_chains(
    params: &ModelParams,
    lattice: &Lattice,
    cfg: &ChainConfig,
    observables: &[Observable],
    chains: usize,
) -> Result<Vec<ChainOutput>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|k| run_chain_on_stream(params, lattice, cfg, observables, k))
        .collect()
}

/// Inverse-variance merge of one observable across chains.
pub fn merged_estimate(outputs: &[ChainOutput], obs: Observable) -> Option<Estimate> {
    let es: Option<Vec<Estimate>> = outputs.iter().map(|o| o.estimate(obs)).collect();
    es.map(|v| merge(&v))
}

/// Recorded `t` configurations of all chains, in stream order.
pub fn pooled_samples(outputs: &[ChainOutput]) -> Vec<Vec<f64>> {
    outputs.iter().flat_map(|o| o.samples.iter().cloned()).collect()
}

/// Dense matrix whose columns are the given configurations.
pub fn samples_matrix(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n = samples.first().map_or(0, |s| s.len());
    DMatrix::from_fn(n, samples.len(), |i, k| samples[k][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::s_covariance;
    use crate::lattice::build_lattice;
    use crate::model::{action_horo, FieldConfig};

    #[test]
    fn constrained_draw_sums_to_zero() {
        let lat = build_lattice(2, &[3, 3]).unwrap();
        let p = ModelParams::delta(2.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.4).collect();
        for _ in 0..20 {
            let s = sample_s_given_t(&t, &p, &lat, &mut rng).unwrap();
            assert!(s.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn draws_match_covariance() {
        let lat = build_lattice(1, &[4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = [0.3, -0.2, 0.5, 0.0];
        for p in [ModelParams::delta(1.5, 0.0).unwrap(), ModelParams::massed(1.5, 0.4).unwrap()] {
            let c = s_covariance(&t, &p, &lat).unwrap().matrix;
            let m = 100_000;
            let draws: Vec<Vec<f64>> = (0..m).map(|_| sample_s_given_t(&t, &p, &lat, &mut rng).unwrap()).collect();
            for i in 0..4 {
                let mean = draws.iter().map(|s| s[i]).sum::<f64>() / m as f64;
                assert!(mean.abs() <= 5.0 * (c[(i, i)] / m as f64).sqrt());
                for j in i..4 {
                    let prods: Vec<f64> = draws.iter().map(|s| s[i] * s[j]).collect();
                    let cij = prods.iter().sum::<f64>() / m as f64;
                    let var = prods.iter().map(|x| (x - cij).powi(2)).sum::<f64>() / (m - 1) as f64;
                    assert!((cij - c[(i, j)]).abs() <= 5.0 * (var / m as f64).sqrt(), "{i}{j}: {cij} vs {}", c[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn variance_at_origin() {
        let lat = build_lattice(1, &[3]).unwrap();
        let p = ModelParams::delta(1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 50_000;
        let xs: Vec<f64> = (0..m).map(|_| sample_s_given_t(&[0.0; 3], &p, &lat, &mut rng).unwrap()[0].powi(2)).collect();
        let e = batch_means(&xs);
        assert!(e.z_against(2.0 / 9.0) < 3.0);
    }

    #[test]
    fn null_proposal_is_always_accepted() {
        let lat = build_lattice(1, &[5]).unwrap();
        let p = ModelParams::delta(2.0, 0.2).unwrap();
        let ctx = Context::new(&p, &lat);
        let t = [0.1, -0.3, 0.7, 0.0, 0.2];
        let s = [0.5, -0.1, 0.0, -0.2, -0.2];
        for i in 0..5 {
            assert_eq!(ctx.local_delta(&t, &s, i, t[i]), 0.0);
        }
        assert_eq!(ctx.dilation_log_ratio(&t, &s, 0.0), 0.0);
    }

    /// `log π(t', s') - log π(t, s)` from the full joint density. The
    /// constrained ensemble has no `½h s² e^t` term.
    fn joint_log_ratio(p: &ModelParams, lat: &Lattice, t: &[f64], s: &[f64], t2: &[f64], s2: &[f64]) -> f64 {
        let action = |t: &[f64], s: &[f64]| {
            let full = action_horo(&FieldConfig { t: t.to_vec(), s: s.to_vec() }, p, lat).unwrap();
            match p.ensemble {
                Ensemble::HMassed => full,
                Ensemble::DeltaConstrained => {
                    full - 0.5 * p.h * t.iter().zip(s).map(|(x, y)| y * y * x.exp()).sum::<f64>()
                }
            }
        };
        action(t, s) - action(t2, s2) + t2.iter().sum::<f64>() - t.iter().sum::<f64>()
    }

    #[test]
    fn local_and_dilation_ratios_match_joint_density() {
        let lat = build_lattice(2, &[3, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [ModelParams::delta(2.0, 0.3).unwrap(), ModelParams::massed(1.5, 0.4).unwrap()] {
            let ctx = Context::new(&p, &lat);
            let t: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = sample_s_given_t(&t, &p, &lat, &mut rng).unwrap();
            for i in 0..12 {
                let new = t[i] + rng.random_range(-0.5..0.5);
                let mut t2 = t.clone();
                t2[i] = new;
                let want = joint_log_ratio(&p, &lat, &t, &s, &t2, &s);
                assert!((-ctx.local_delta(&t, &s, i, new) - want).abs() < 1e-10);
            }
            let gamma = 0.37;
            let t2: Vec<f64> = t.iter().map(|x| x + gamma).collect();
            let s2: Vec<f64> = s.iter().map(|x| x * (-gamma).exp()).collect();
            // Jacobian of s on its slice: e^{-(n-1)γ} constrained, e^{-nγ} massed.
            let dim = if p.ensemble == Ensemble::DeltaConstrained { 11.0 } else { 12.0 };
            let want = joint_log_ratio(&p, &lat, &t, &s, &t2, &s2) - dim * gamma;
            assert!((ctx.dilation_log_ratio(&t, &s, gamma) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_seed_replays_bit_for_bit() {
        let lat = build_lattice(1, &[6]).unwrap();
        let p = ModelParams::delta(2.0, 1.0 / 6.0).unwrap();
        let cfg = ChainConfig {
            num_sweeps: 400,
            burn_in: 100,
            seed: 9,
            keep_samples: true,
            ..Default::default()
        };
        let obs = [Observable::WardSum, Observable::Theorem1];
        let a = run_chain(&p, &lat, &cfg, &obs).unwrap();
        let b = run_chain(&p, &lat, &cfg, &obs).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.samples, b.samples);
        let c = run_chain_on_stream(&p, &lat, &cfg, &obs, 1).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn langevin_step_with_zero_noise_direction_is_consistent() {
        let lat = build_lattice(1, &[4]).unwrap();
        let p = ModelParams::delta(2.0, 0.25).unwrap();
        let cfg = ChainConfig {
            kernel: Kernel::MarginalLangevin,
            step_size: 0.3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, stats) = mcmc_step_t(&[0.1, 0.0, -0.1, 0.2], &p, &lat, &cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(stats.local_proposed, 1);
    }

    #[test]
    fn trace_csv_layout() {
        let lat = build_lattice(1, &[4]).unwrap();
        let p = ModelParams::delta(2.0, 0.25).unwrap();
        let cfg = ChainConfig {
            num_sweeps: 60,
            burn_in: 20,
            ..Default::default()
        };
        let out = run_chain(&p, &lat, &cfg, &[Observable::MeanT]).unwrap();
        let mut buf = Vec::new();
        out.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "sweep,t0,sum_sinh_t,mean_t");
        assert_eq!(lines.count(), 40);
    }
}
