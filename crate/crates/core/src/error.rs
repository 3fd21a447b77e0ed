use thiserror::Error;

/// Errors raised by lattice construction, model evaluation, sampling and the
/// experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("floating-point overflow at site {site}: {what}")]
    Overflow { site: usize, what: String },

    #[error("factorization failed{}: {reason}", site.map(|s| format!(" near site {s}")).unwrap_or_default())]
    Factorization { site: Option<usize>, reason: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("operation `{op}` is limited to {limit} sites (got {sites})")]
    TooLarge {
        op: &'static str,
        sites: usize,
        limit: usize,
    },

    #[error("non-finite value of `{observable}` at sweep {sweep}")]
    NonFinite { observable: String, sweep: usize },

    #[error("energy {energy} lies outside the band (E^2 > 4 N J0 = {edge})")]
    OutsideBand { energy: f64, edge: f64 },

    #[error("effective sample size {ess:.1} is below the required {required:.1}; {hint}")]
    LowEffectiveSampleSize {
        ess: f64,
        required: f64,
        hint: &'static str,
    },

    #[error("near-singular resolvent solve: condition estimate {condition:.3e}")]
    NearSingular { condition: f64 },

    #[error("test function is not integrable: {0}")]
    NonIntegrable(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
