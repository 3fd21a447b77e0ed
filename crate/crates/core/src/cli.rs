//! Experiment runner behind the `horosim` binary.
//!
//! ```text
//! horosim <simulate|certify|ward|study|rmt|pushforward> --config <path> [--seed N] [--out DIR]
//! ```
//!
//! # Config grammar
//!
//! TOML: flat top-level keys plus the sections `[chain]`, `[output]`,
//! `[certify]`, `[ward]`, `[study]`, `[rmt]` and `[pushforward]`. Every key
//! is optional unless the subcommand needs it; unknown keys are errors, and
//! all violations are reported together.
//!
//! | key | type | meaning |
//! |---|---|---|
//! | `seed` | integer | master seed (default 1; `--seed` overrides) |
//! | `d`, `sides` | integer, integer list | lattice dimension and side lengths |
//! | `beta` | number | coupling |
//! | `h` / `h_rule` | number / `"inverse_volume"` | regularizer; exactly one |
//! | `ensemble` | `"delta_constrained"` \| `"h_massed"` | default constrained |
//! | `chain.*` | | `num_sweeps burn_in step_size global_step thin kernel chains` |
//! | `output.dir` | string | output directory |
//! | `certify.*` | | `betas` (default `[beta]`), `configs` (default 100) |
//! | `ward.*` | | `alphas` (default `[0.5, 1, 2]`), `radii` (default `[1, 2]`) |
//! | `study.sizes` | integer list | side lengths; `h = 1/|Λ|` at each |
//! | `rmt.*` | | `orbitals profile w cube_side j0 j1 energy epsilon x y draws` |
//! | `pushforward.*` | | `n big_n draws functions = [[trace_pow, det_pow, rate], …]` |
//!
//! The output directory is `--out`, else `$HOROSIM_OUT_DIR`, else
//! `output.dir`, else `horosim-out`. The environment overrides nothing else.
//!
//! # Outputs
//!
//! `<subcommand>.csv` tables start with `# seed: N` and `# config: {json}`
//! comment lines followed by one header row. `<subcommand>.json` holds the
//! resolved config, the seed, every [`BoundCheck`] and the results. A run
//! that fails a check or errors also writes `failure.json`. Nothing depends
//! on wall-clock time, so equal configs and seeds give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::hessian::{hessian_effective, CertificateRow, CERTIFICATE_TOL, IDENTITY_TOL};
use crate::lattice::Lattice;
use crate::model::{Ensemble, ModelParams};
use crate::observables::{brascamp_lieb_suite, symmetry_breaking_study, BoundCheck, StudyConfig, StudyRow};
use crate::rmt::{deformed_average_b1, pushforward_check, resolvent_stats, saddle_params, BandSpec, ProfileKind, TestFunction};
use crate::sampler::{merged_estimate, pooled_samples, run_chain_on_stream, run_chains, ChainConfig, Kernel, Observable};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "HOROSIM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Simulate,
    Certify,
    Ward,
    Study,
    Rmt,
    Pushforward,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Certify => "certify",
            Subcommand::Ward => "ward",
            Subcommand::Study => "study",
            Subcommand::Rmt => "rmt",
            Subcommand::Pushforward => "pushforward",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "horosim", about = "H² sigma model and band random matrix experiments")]
pub struct Args {
    pub subcommand: Subcommand,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HRule {
    Fixed(f64),
    InverseVolume,
}

#[derive(Debug, Clone, Serialize)]
pub struct RmtSpec {
    pub orbitals: usize,
    pub profile: String,
    pub w: f64,
    pub cube_side: usize,
    pub j0: f64,
    pub j1: f64,
    pub energy: f64,
    pub epsilon: f64,
    pub x: usize,
    pub y: usize,
    pub draws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PushforwardSpec {
    pub n: usize,
    pub big_n: usize,
    pub draws: usize,
    pub functions: Vec<TestFunction>,
}

/// Fully validated run description.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub dimension: Option<usize>,
    pub sides: Option<Vec<usize>>,
    pub beta: Option<f64>,
    pub h: Option<HRule>,
    pub ensemble: Ensemble,
    pub chain: ChainConfig,
    pub chains: usize,
    pub output_dir: Option<PathBuf>,
    pub certify_betas: Vec<f64>,
    pub certify_configs: usize,
    pub ward_alphas: Vec<f64>,
    pub ward_radii: Vec<f64>,
    pub study_sizes: Vec<usize>,
    pub rmt: Option<RmtSpec>,
    pub pushforward: Option<PushforwardSpec>,
    /// Non-fatal remarks, e.g. a coupling outside a guarantee's range.
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn lattice(&self) -> Result<Lattice> {
        match (self.dimension, &self.sides) {
            (Some(d), Some(s)) => Lattice::new(d, s),
            _ => Err(Error::Config(vec!["lattice keys `d` and `sides` are required".into()])),
        }
    }

    /// Model parameters on `lattice`, resolving the `h` rule.
    pub fn params(&self, beta: f64, lattice: &Lattice) -> Result<ModelParams> {
        let h = match self.h {
            Some(HRule::Fixed(h)) => h,
            Some(HRule::InverseVolume) => 1.0 / lattice.num_sites() as f64,
            None => return Err(Error::Config(vec!["`h` or `h_rule` is required".into()])),
        };
        ModelParams::new(beta, h, self.ensemble)
    }
}

/// Typed access to one table; records consumed keys and collects errors.
struct Section<'a> {
    prefix: &'static str,
    table: Option<&'a Table>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(prefix: &'static str, table: Option<&'a Table>) -> Self {
        Self {
            prefix,
            table,
            used: Vec::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn float(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                errs.push(format!("`{}` must be a number, found {}", self.path(key), other.type_str()));
                None
            }
        }
    }

    fn uint(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<usize> {
        match self.raw(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                errs.push(format!("`{}` must be a non-negative integer, found {other}", self.path(key)));
                None
            }
        }
    }

    fn string(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                errs.push(format!("`{}` must be a string, found {}", self.path(key), other.type_str()));
                None
            }
        }
    }

    fn list<T>(&mut self, key: &'static str, errs: &mut Vec<String>, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
        let path = self.path(key);
        match self.raw(key)? {
            Value::Array(xs) => {
                let parsed: Option<Vec<T>> = xs.iter().map(&item).collect();
                if parsed.is_none() {
                    errs.push(format!("`{path}` has an entry of the wrong type"));
                }
                parsed
            }
            other => {
                errs.push(format!("`{path}` must be a list, found {}", other.type_str()));
                None
            }
        }
    }

    fn floats(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<Vec<f64>> {
        self.list(key, errs, as_float)
    }

    fn uints(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<Vec<usize>> {
        self.list(key, errs, |v| v.as_integer().filter(|i| *i >= 0).map(|i| i as usize))
    }

    fn unknown(&self, errs: &mut Vec<String>, sections: &[&str]) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.used.contains(&key.as_str()) && !sections.contains(&key.as_str()) {
                    errs.push(format!("unknown key `{}`", self.path(key)));
                }
            }
        }
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

const SECTIONS: [&str; 7] = ["chain", "output", "certify", "ward", "study", "rmt", "pushforward"];

/// Parses and validates a config for `subcommand`.
///
/// Returns every violation at once as [`Error::Config`].
pub fn parse_config(text: &str, subcommand: Subcommand) -> Result<RunConfig> {
    let doc: Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("malformed config: {e}")]))?;
    let mut errs = Vec::new();
    let mut warnings = Vec::new();

    let mut sections = Vec::new();
    for name in SECTIONS {
        match doc.get(name) {
            None => sections.push(None),
            Some(Value::Table(t)) => sections.push(Some(t)),
            Some(_) => {
                errs.push(format!("`{name}` must be a section"));
                sections.push(None);
            }
        }
    }
    let mut top = Section::new("", Some(&doc));
    let mut chain_s = Section::new("chain", sections[0]);
    let mut out_s = Section::new("output", sections[1]);
    let mut cert_s = Section::new("certify", sections[2]);
    let mut ward_s = Section::new("ward", sections[3]);
    let mut study_s = Section::new("study", sections[4]);
    let mut rmt_s = Section::new("rmt", sections[5]);
    let mut push_s = Section::new("pushforward", sections[6]);

    let seed = match top.raw("seed") {
        None => 1,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(other) => {
            errs.push(format!("`seed` must be a non-negative integer, found {other}"));
            1
        }
    };
    let dimension = top.uint("d", &mut errs);
    let sides = top.uints("sides", &mut errs);
    let beta = top.float("beta", &mut errs);
    let h_value = top.float("h", &mut errs);
    let h_rule = top.string("h_rule", &mut errs);
    let ensemble = match top.string("ensemble", &mut errs).as_deref() {
        None | Some("delta_constrained") => Ensemble::DeltaConstrained,
        Some("h_massed") => Ensemble::HMassed,
        Some(other) => {
            errs.push(format!("`ensemble` must be \"delta_constrained\" or \"h_massed\", found \"{other}\""));
            Ensemble::DeltaConstrained
        }
    };
    let h_given = h_value.is_some() || h_rule.is_some();
    let h = match (h_value, h_rule.as_deref()) {
        (Some(_), Some(_)) => {
            errs.push("give either `h` or `h_rule`, not both".into());
            None
        }
        (Some(h), None) => Some(HRule::Fixed(h)),
        (None, Some("inverse_volume")) => Some(HRule::InverseVolume),
        (None, Some(other)) => {
            errs.push(format!("`h_rule` must be \"inverse_volume\", found \"{other}\""));
            None
        }
        (None, None) => None,
    };

    if let (Some(d), Some(s)) = (dimension, &sides) {
        if s.len() != d {
            errs.push(format!("`sides` has {} entries but d = {d}", s.len()));
        }
    }
    if let Some(b) = beta {
        if !(b > 0.0 && b.is_finite()) {
            errs.push(format!("`beta` must be positive, got {b}"));
        }
    }
    if let Some(HRule::Fixed(h)) = h {
        if !(h >= 0.0 && h.is_finite()) {
            errs.push(format!("`h` must be non-negative, got {h}"));
        }
    }

    let defaults = ChainConfig::default();
    let mut chain = ChainConfig {
        seed,
        ..defaults.clone()
    };
    if let Some(v) = chain_s.uint("num_sweeps", &mut errs) {
        chain.num_sweeps = v;
    }
    if let Some(v) = chain_s.uint("burn_in", &mut errs) {
        chain.burn_in = v;
    }
    if let Some(v) = chain_s.float("step_size", &mut errs) {
        chain.step_size = v;
    }
    if let Some(v) = chain_s.float("global_step", &mut errs) {
        chain.global_step = v;
    }
    if let Some(v) = chain_s.uint("thin", &mut errs) {
        chain.thin = v;
    }
    match chain_s.string("kernel", &mut errs).as_deref() {
        None | Some("gibbs_alternating") => {}
        Some("marginal_langevin") => chain.kernel = Kernel::MarginalLangevin,
        Some(other) => errs.push(format!(
            "`chain.kernel` must be \"gibbs_alternating\" or \"marginal_langevin\", found \"{other}\""
        )),
    }
    let chains = chain_s.uint("chains", &mut errs).unwrap_or(1);
    if chains == 0 {
        errs.push("`chain.chains` must be at least 1".into());
    }
    if let Err(Error::Config(e)) = chain.validate() {
        errs.extend(e.into_iter().map(|m| format!("chain: {m}")));
    }

    let output_dir = out_s.string("dir", &mut errs).map(PathBuf::from);

    let certify_betas = cert_s.floats("betas", &mut errs).or_else(|| beta.map(|b| vec![b])).unwrap_or_default();
    let certify_configs = cert_s.uint("configs", &mut errs).unwrap_or(100);
    let ward_alphas = ward_s.floats("alphas", &mut errs).unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let ward_radii = ward_s.floats("radii", &mut errs).unwrap_or_else(|| vec![1.0, 2.0]);
    let study_sizes = study_s.uints("sizes", &mut errs).unwrap_or_default();

    let rmt_present = sections[5].is_some();
    let rmt = {
        let orbitals = rmt_s.uint("orbitals", &mut errs).unwrap_or(1);
        let profile = rmt_s.string("profile", &mut errs).unwrap_or_else(|| "exponential_w".into());
        let w = rmt_s.float("w", &mut errs).unwrap_or(1.0);
        let cube_side = rmt_s.uint("cube_side", &mut errs).unwrap_or(1);
        let j0 = rmt_s.float("j0", &mut errs).unwrap_or(1.0);
        let j1 = rmt_s.float("j1", &mut errs).unwrap_or(0.0);
        let energy = rmt_s.float("energy", &mut errs);
        let epsilon = rmt_s.float("epsilon", &mut errs);
        let x = rmt_s.uint("x", &mut errs).unwrap_or(0);
        let y = rmt_s.uint("y", &mut errs).unwrap_or(0);
        let draws = rmt_s.uint("draws", &mut errs).unwrap_or(1000);
        if !["exponential_w", "cubes"].contains(&profile.as_str()) {
            errs.push(format!("`rmt.profile` must be \"exponential_w\" or \"cubes\", found \"{profile}\""));
        }
        if subcommand == Subcommand::Rmt {
            if energy.is_none() {
                errs.push("missing required key `rmt.energy`".into());
            }
            match epsilon {
                None => errs.push("missing required key `rmt.epsilon`".into()),
                Some(e) if !(e > 0.0) => errs.push(format!("`rmt.epsilon` must be positive, got {e}")),
                _ => {}
            }
        }
        match (rmt_present, energy, epsilon) {
            (true, Some(energy), Some(epsilon)) => Some(RmtSpec {
                orbitals,
                profile,
                w,
                cube_side,
                j0,
                j1,
                energy,
                epsilon,
                x,
                y,
                draws,
            }),
            _ => None,
        }
    };

    let pushforward = {
        let n = push_s.uint("n", &mut errs);
        let big_n = push_s.uint("big_n", &mut errs);
        let draws = push_s.uint("draws", &mut errs).unwrap_or(20_000);
        let functions = push_s
            .list("functions", &mut errs, |v| {
                let a = v.as_array()?;
                if a.len() != 3 {
                    return None;
                }
                Some(TestFunction::new(
                    a[0].as_integer().filter(|i| *i >= 0)? as u32,
                    a[1].as_integer().filter(|i| *i >= 0)? as u32,
                    as_float(&a[2])?,
                ))
            })
            .unwrap_or_else(|| (0..3).map(|k| TestFunction::new(k, 0, 1.0)).collect());
        if subcommand == Subcommand::Pushforward {
            if n.is_none() {
                errs.push("missing required key `pushforward.n`".into());
            }
            if big_n.is_none() {
                errs.push("missing required key `pushforward.big_n`".into());
            }
        }
        match (n, big_n) {
            (Some(n), Some(big_n)) => Some(PushforwardSpec {
                n,
                big_n,
                draws,
                functions,
            }),
            _ => None,
        }
    };

    let needs_lattice = matches!(subcommand, Subcommand::Simulate | Subcommand::Certify | Subcommand::Ward | Subcommand::Rmt);
    let needs_model = matches!(subcommand, Subcommand::Simulate | Subcommand::Certify | Subcommand::Ward);
    if needs_lattice || subcommand == Subcommand::Study {
        if dimension.is_none() {
            errs.push("missing required key `d`".into());
        }
    }
    if needs_lattice && sides.is_none() {
        errs.push("missing required key `sides`".into());
    }
    if needs_model || subcommand == Subcommand::Study {
        if beta.is_none() {
            errs.push("missing required key `beta`".into());
        }
    }
    if needs_model && !h_given {
        errs.push("missing required key `h` or `h_rule`".into());
    }
    if subcommand == Subcommand::Study {
        if study_sizes.is_empty() {
            errs.push("missing required key `study.sizes`".into());
        }
        if let Some(HRule::Fixed(_)) = h {
            errs.push("`study` always uses h = 1/|Λ|; remove `h`".into());
        }
        if ensemble != Ensemble::DeltaConstrained {
            errs.push("`study` runs the constrained ensemble only".into());
        }
    }
    if subcommand == Subcommand::Certify {
        for &b in &certify_betas {
            if b < 1.5 {
                warnings.push(format!("certify: beta = {b} is below 3/2, where the Hessian lower bound is not guaranteed"));
            }
        }
        if certify_configs == 0 {
            errs.push("`certify.configs` must be at least 1".into());
        }
        if ensemble != Ensemble::DeltaConstrained {
            errs.push("`certify` checks the constrained ensemble only".into());
        }
    }
    if subcommand == Subcommand::Ward && ensemble != Ensemble::DeltaConstrained {
        errs.push("`ward` checks the constrained ensemble only".into());
    }

    top.unknown(&mut errs, &SECTIONS);
    for s in [&chain_s, &out_s, &cert_s, &ward_s, &study_s, &rmt_s, &push_s] {
        s.unknown(&mut errs, &[]);
    }

    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(RunConfig {
        subcommand,
        seed,
        dimension,
        sides,
        beta,
        h,
        ensemble,
        chain,
        chains,
        output_dir,
        certify_betas,
        certify_configs,
        ward_alphas,
        ward_radii,
        study_sizes,
        rmt,
        pushforward,
        warnings,
    })
}

/// Result of one subcommand: checks, a CSV table and a JSON payload.
pub struct Outcome {
    pub checks: Vec<BoundCheck>,
    pub csv_header: String,
    pub csv_rows: Vec<String>,
    pub results: serde_json::Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the configured subcommand without touching the filesystem.
pub fn dispatch(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.subcommand {
        Subcommand::Simulate => simulate(cfg),
        Subcommand::Certify => certify(cfg),
        Subcommand::Ward => ward(cfg),
        Subcommand::Study => study(cfg),
        Subcommand::Rmt => rmt(cfg),
        Subcommand::Pushforward => pushforward(cfg),
    }
}

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let lattice = cfg.lattice()?;
    let params = cfg.params(cfg.beta.expect("validated"), &lattice)?;
    let mut observables = vec![Observable::WardSum, Observable::MeanSinh, Observable::MeanT, Observable::T0];
    if lattice.num_sites() <= crate::linalg::DENSE_SITE_LIMIT {
        observables.extend([
            Observable::Theorem1,
            Observable::Theorem1Raw,
            Observable::SFourthWick,
            Observable::SFourthRaw,
        ]);
    }
    let out = run_chains(&params, &lattice, &cfg.chain, &observables, cfg.chains)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for o in &observables {
        let e = merged_estimate(&out, *o).expect("recorded");
        let tau: Vec<f64> = out
            .iter()
            .map(|c| c.summaries.iter().find(|s| s.name == o.name()).map_or(f64::NAN, |s| s.autocorr_time))
            .collect();
        let tau_max = tau.iter().copied().fold(f64::NAN, f64::max);
        rows.push(format!("{},{},{},{:.1},{}", o.name(), f(e.mean), f(e.std_error), e.n_effective, f(tau_max)));
        summary.push(json!({"observable": o.name(), "estimate": e, "autocorr_time": tau_max}));
    }
    let diagnostics: Vec<_> = out.iter().map(|c| c.diagnostics.clone()).collect();
    Ok(Outcome {
        checks: Vec::new(),
        csv_header: "observable,mean,std_error,n_effective,autocorr_time".into(),
        csv_rows: rows,
        results: json!({"observables": summary, "diagnostics": diagnostics, "h": params.h}),
    })
}

fn certify(cfg: &RunConfig) -> Result<Outcome> {
    let lattice = cfg.lattice()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut per_beta = Vec::new();
    for (k, &beta) in cfg.certify_betas.iter().enumerate() {
        let params = cfg.params(beta, &lattice)?;
        let chain = ChainConfig {
            keep_samples: true,
            ..cfg.chain.clone()
        };
        let out = run_chain_on_stream(&params, &lattice, &chain, &[Observable::MeanT], k as u64)?;
        let picked = evenly_spaced(&out.samples, cfg.certify_configs);
        let mut min_lambda = f64::INFINITY;
        let mut max_edge = 0.0f64;
        let mut max_row = 0.0f64;
        let mut all = true;
        for (i, t) in picked.iter().enumerate() {
            let report = hessian_effective(t, &params, &lattice)?;
            let row = CertificateRow::from_report(cfg.seed, i, &report);
            all &= row.passed();
            min_lambda = min_lambda.min(report.lambda_min_shifted);
            max_edge = max_edge.max(report.max_edge_moment);
            max_row = max_row.max(report.max_row_sum_error);
            rows.push(format!("{beta},{}", row.to_csv()));
        }
        checks.push(BoundCheck::new(format!("certificate beta={beta}"), -min_lambda, CERTIFICATE_TOL, 0.0));
        checks.push(BoundCheck::new(format!("edge moments beta={beta}"), max_edge, 0.5 + IDENTITY_TOL, 0.0));
        checks.push(BoundCheck::new(format!("row sums beta={beta}"), max_row, IDENTITY_TOL, 0.0));
        per_beta.push(json!({"beta": beta, "configs": picked.len(), "min_lambda": min_lambda,
            "max_edge_moment": max_edge, "max_row_sum_error": max_row, "all_rows_passed": all}));
    }
    Ok(Outcome {
        checks,
        csv_header: format!("beta,{}", CertificateRow::CSV_HEADER),
        csv_rows: rows,
        results: json!({ "per_beta": per_beta }),
    })
}

/// `count` samples at evenly spaced positions.
pub fn evenly_spaced(samples: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    let n = samples.len();
    let count = count.min(n);
    (0..count).map(|i| samples[(i * n) / count].clone()).collect()
}

fn ward(cfg: &RunConfig) -> Result<Outcome> {
    let lattice = cfg.lattice()?;
    let params = cfg.params(cfg.beta.expect("validated"), &lattice)?;
    let chain = ChainConfig {
        keep_samples: true,
        ..cfg.chain.clone()
    };
    let out = run_chains(&params, &lattice, &chain, &[Observable::WardSum], cfg.chains)?;
    let samples = pooled_samples(&out);
    let checks = brascamp_lieb_suite(&samples, &params, &lattice, &cfg.ward_alphas, &cfg.ward_radii)?;
    let ward = merged_estimate(&out, Observable::WardSum).expect("recorded");
    let rows = checks
        .iter()
        .map(|c| format!("{},{},{},{},{},{}", c.name, f(c.lhs), f(c.rhs), f(c.slack), f(c.mc_error), c.passed as u8))
        .collect();
    Ok(Outcome {
        checks,
        csv_header: "name,lhs,rhs,slack,mc_error,passed".into(),
        csv_rows: rows,
        results: json!({"ward": ward, "h": params.h, "samples": samples.len()}),
    })
}

/// Checks asserted on a study table: Ward residuals per row, then flatness
/// in `L` for `d ≥ 3` or monotone growth for `d ≤ 2`.
pub fn study_checks(rows: &[StudyRow]) -> Vec<BoundCheck> {
    let mut checks: Vec<BoundCheck> = rows
        .iter()
        .map(|r| BoundCheck::new(format!("ward L={}", r.side), r.ward_residual, 0.0, r.ward.std_error))
        .collect();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.dimension >= 3 {
            let se = (a.trace_sq.std_error.powi(2) + b.trace_sq.std_error.powi(2)).sqrt();
            checks.push(BoundCheck::new(
                format!("stable L={} vs L={}", a.side, b.side),
                (a.trace_sq.mean - b.trace_sq.mean).abs(),
                0.0,
                se,
            ));
        } else {
            checks.push(BoundCheck::new(
                format!("growing L={} to L={}", a.side, b.side),
                a.trace_sq.mean,
                b.trace_sq.mean,
                0.0,
            ));
        }
    }
    checks
}

fn study(cfg: &RunConfig) -> Result<Outcome> {
    let study = StudyConfig {
        dimension: cfg.dimension.expect("validated"),
        sides: cfg.study_sizes.clone(),
        beta: cfg.beta.expect("validated"),
        chain: cfg.chain.clone(),
        chains: cfg.chains,
    };
    let rows = symmetry_breaking_study(&study)?;
    Ok(Outcome {
        checks: study_checks(&rows),
        csv_header: StudyRow::CSV_HEADER.into(),
        csv_rows: rows.iter().map(|r| r.to_csv()).collect(),
        results: json!({ "rows": rows }),
    })
}

fn rmt(cfg: &RunConfig) -> Result<Outcome> {
    let spec_cfg = cfg.rmt.as_ref().expect("validated");
    let lattice = cfg.lattice()?;
    let kind = match spec_cfg.profile.as_str() {
        "cubes" => ProfileKind::Cubes {
            side: spec_cfg.cube_side,
            j0: spec_cfg.j0,
            j1: spec_cfg.j1,
        },
        _ => ProfileKind::ExponentialW { w: spec_cfg.w },
    };
    let spec = BandSpec::new(&lattice, spec_cfg.orbitals, &kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (e, eps) = (spec_cfg.energy, spec_cfg.epsilon);
    let stats = resolvent_stats(&spec, e, eps, spec_cfg.x, spec_cfg.y, spec_cfg.draws, &mut rng)?;
    let b1 = deformed_average_b1(&spec, e, eps, spec_cfg.x, spec_cfg.draws, &mut rng)?;

    // Saddle parameters from the on-site and nearest-neighbour variances.
    let j0 = spec.j[(0, 0)];
    let j1 = lattice.neighbors(0).map(|k| spec.j[(0, k)]).fold(0.0, f64::max);
    let saddle = saddle_params(spec.orbitals, j0, j1, e, eps);
    let mut checks = vec![BoundCheck::new("resolvent norm eps*|G|", stats.max_norm_times_epsilon, 1.0 + 1e-12, 0.0)];
    let saddle_json = match &saddle {
        Ok(s) => {
            let lhs = 4.0 * j0 * j0 * s.rho * s.rho + e * e;
            let target = 4.0 * spec.orbitals as f64 * j0;
            checks.push(BoundCheck::new("saddle self-consistency", (lhs - target).abs(), 1e-12 * target, 0.0));
            json!(s)
        }
        Err(err) => json!({ "error": err.to_string() }),
    };
    let rows = vec![
        format!("density,{},{}", f(stats.density.mean), f(stats.density.std_error)),
        format!("abs_sq,{},{}", f(stats.abs_sq.mean), f(stats.abs_sq.std_error)),
        format!("b1,{},{}", f(b1.estimate.mean), f(b1.estimate.std_error)),
    ];
    Ok(Outcome {
        checks,
        csv_header: "quantity,mean,std_error".into(),
        csv_rows: rows,
        results: json!({
            "resolvent": stats,
            "b1": b1,
            "saddle": saddle_json,
            "j0": j0,
            "j1": j1,
            "j_min_eigenvalue": spec.j_min_eigenvalue,
        }),
    })
}

fn pushforward(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.pushforward.as_ref().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = pushforward_check(p.n, p.big_n, &p.functions, p.draws, &mut rng)?;
    let mut checks = vec![BoundCheck::new("ratio constancy (z)", report.max_pairwise_z, 5.0, 0.0)];
    if p.n == 1 {
        // dφ dφ̄ = Π dRe dIm and dM = dλ give π^N / (N - 1)!.
        let c = std::f64::consts::PI.powi(p.big_n as i32) / (1..p.big_n).map(|k| k as f64).product::<f64>();
        for r in &report.rows {
            checks.push(BoundCheck::new(format!("ratio {} (z)", r.function), r.ratio.z_against(c), 5.0, 0.0));
        }
    }
    let rows = report
        .rows
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", r.function, f(r.lhs.mean), f(r.lhs.std_error), f(r.rhs), f(r.ratio.mean), f(r.ratio.std_error)))
        .collect();
    Ok(Outcome {
        checks,
        csv_header: "function,lhs,lhs_se,rhs,ratio,ratio_se".into(),
        csv_rows: rows,
        results: json!({ "report": report }),
    })
}

/// `--out`, else the environment variable, else `output.dir`, else
/// `horosim-out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV) {
        return PathBuf::from(p);
    }
    cfg.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("horosim-out"))
}

/// Writes the CSV table and JSON summary; returns their paths.
pub fn write_outputs(cfg: &RunConfig, outcome: &Outcome, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let name = cfg.subcommand.name();
    let config_json = serde_json::to_string(cfg)?;
    let mut csv = String::new();
    writeln!(csv, "# seed: {}", cfg.seed).expect("string write");
    writeln!(csv, "# config: {config_json}").expect("string write");
    writeln!(csv, "{}", outcome.csv_header).expect("string write");
    for r in &outcome.csv_rows {
        writeln!(csv, "{r}").expect("string write");
    }
    let csv_path = dir.join(format!("{name}.csv"));
    fs::write(&csv_path, csv)?;
    let summary = json!({
        "subcommand": name,
        "seed": cfg.seed,
        "config": cfg,
        "passed": outcome.passed(),
        "checks": outcome.checks,
        "results": outcome.results,
    });
    let json_path = dir.join(format!("{name}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((csv_path, json_path))
}

fn write_failure(dir: &Path, subcommand: Subcommand, seed: Option<u64>, config: Option<&RunConfig>, reason: serde_json::Value) {
    let body = json!({
        "status": "failed",
        "subcommand": subcommand.name(),
        "seed": seed,
        "config": config,
        "reason": reason,
    });
    let written = fs::create_dir_all(dir).and_then(|_| {
        fs::write(dir.join("failure.json"), serde_json::to_string_pretty(&body).unwrap_or_default() + "\n")
    });
    if let Err(e) = written {
        log::error!("could not write failure.json: {e}");
    }
}

/// Parses, dispatches and writes outputs. Exit code 0 iff every check passed.
pub fn run(args: &Args) -> ExitCode {
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            let dir = resolve_out_dir(args.out.as_deref(), None);
            write_failure(&dir, args.subcommand, args.seed, None, json!({"error": format!("reading {}: {e}", args.config.display())}));
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text, args.subcommand) {
        Ok(c) => c,
        Err(e) => {
            let dir = resolve_out_dir(args.out.as_deref(), None);
            let list = match &e {
                Error::Config(v) => json!(v),
                other => json!([other.to_string()]),
            };
            write_failure(&dir, args.subcommand, args.seed, None, json!({ "config_errors": list }));
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.chain.seed = seed;
    }
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    let dir = resolve_out_dir(args.out.as_deref(), cfg.output_dir.as_deref());
    let outcome = match dispatch(&cfg) {
        Ok(o) => o,
        Err(e) => {
            write_failure(&dir, cfg.subcommand, Some(cfg.seed), Some(&cfg), json!({"error": e.to_string()}));
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = write_outputs(&cfg, &outcome, &dir) {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::FAILURE;
    }
    for c in &outcome.checks {
        println!("{} {}: lhs={:.6e} rhs={:.6e} mc_error={:.3e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.lhs, c.rhs, c.mc_error);
    }
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        let failed: Vec<&BoundCheck> = outcome.checks.iter().filter(|c| !c.passed).collect();
        write_failure(&dir, cfg.subcommand, Some(cfg.seed), Some(&cfg), json!({ "failed_checks": failed }));
        ExitCode::FAILURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "d = 3\nsides = [4, 4, 4]\nbeta = 2\nh_rule = \"inverse_volume\"\nseed = 1\n";

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(MINIMAL, Subcommand::Ward).unwrap();
        assert_eq!(c.sides.as_deref(), Some(&[4, 4, 4][..]));
        assert_eq!(c.h, Some(HRule::InverseVolume));
        let lat = c.lattice().unwrap();
        assert!((c.params(2.0, &lat).unwrap().h - 1.0 / 64.0).abs() < 1e-15);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn low_beta_certify_warns() {
        let text = MINIMAL.replace("beta = 2", "beta = 1.0");
        let c = parse_config(&text, Subcommand::Certify).unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("3/2"));
    }

    #[test]
    fn every_violation_is_reported() {
        let text = "d = 3\nsides = [4, 4]\nbeta = 2\nh = 0.1\nh_rule = \"inverse_volume\"\nbta = 1\n[chain]\nsweeps = 3\n";
        match parse_config(text, Subcommand::Simulate) {
            Err(Error::Config(errs)) => {
                let all = errs.join("\n");
                assert!(all.contains("`sides` has 2 entries but d = 3"), "{all}");
                assert!(all.contains("unknown key `bta`"), "{all}");
                assert!(all.contains("unknown key `chain.sweeps`"), "{all}");
                assert!(all.contains("either `h` or `h_rule`"), "{all}");
                assert_eq!(errs.len(), 4, "{all}");
            }
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn missing_keys_are_listed() {
        match parse_config("seed = 3\n", Subcommand::Ward) {
            Err(Error::Config(errs)) => {
                let all = errs.join("\n");
                for key in ["`d`", "`sides`", "`beta`", "`h` or `h_rule`"] {
                    assert!(all.contains(key), "{all}");
                }
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("[pushforward]\nn = 1\nbig_n = 1\n", Subcommand::Pushforward).is_ok());
    }

    #[test]
    fn out_dir_precedence() {
        let p = resolve_out_dir(Some(Path::new("a")), Some(Path::new("b")));
        assert_eq!(p, PathBuf::from("a"));
    }

    #[test]
    fn evenly_spaced_picks() {
        let s: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let p = evenly_spaced(&s, 4);
        assert_eq!(p.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![0.0, 2.0, 5.0, 7.0]);
    }
}
