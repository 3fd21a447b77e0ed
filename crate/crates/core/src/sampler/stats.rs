//! Error bars for correlated Monte-Carlo series.

use serde::{Deserialize, Serialize};

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: f64,
    pub n_samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n_effective: f64::INFINITY,
            n_samples: 0,
        }
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        z_ratio((self.mean - other.mean).abs(), se)
    }

    /// `|self - value|` in units of the standard error.
    pub fn z_against(&self, value: f64) -> f64 {
        z_ratio((self.mean - value).abs(), self.std_error)
    }
}

/// `diff / se`, with exact agreement scoring zero even when `se = 0`.
fn z_ratio(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Splits `n` samples into `⌊√n⌋` equal batches; the leading remainder is
/// dropped. Returns `(offset, batch_len, batches)`.
fn batch_layout(n: usize) -> (usize, usize, usize) {
    let batches = ((n as f64).sqrt().floor() as usize).max(1);
    let len = n / batches;
    (n - batches * len, len, batches)
}

fn batch_averages(xs: &[f64]) -> Vec<f64> {
    let (offset, len, batches) = batch_layout(xs.len());
    (0..batches)
        .map(|b| mean(&xs[offset + b * len..offset + (b + 1) * len]))
        .collect()
}

/// Mean with a batch-means standard error over `⌊√N⌋` batches.
///
/// `n_effective = min(N, Var(x) / se²)`.
pub fn batch_means(xs: &[f64]) -> Estimate {
    let n = xs.len();
    assert!(n >= 4, "batch means needs at least 4 samples");
    let b = batch_averages(xs);
    let se = (sample_variance(&b) / b.len() as f64).sqrt();
    let var = sample_variance(xs);
    let n_effective = if se > 0.0 { (var / (se * se)).min(n as f64) } else { n as f64 };
    Estimate {
        mean: mean(xs),
        std_error: se,
        n_effective,
        n_samples: n,
    }
}

/// Jackknife over batches for a smooth function of several series' means.
///
/// All series must have the same length. The reported `n_effective` is the
/// smallest batch-means value among the inputs.
pub fn jackknife<F>(series: &[&[f64]], f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    let n = series[0].len();
    assert!(series.iter().all(|s| s.len() == n), "series lengths differ");
    let batches: Vec<Vec<f64>> = series.iter().map(|s| batch_averages(s)).collect();
    let nb = batches[0].len();
    let totals: Vec<f64> = batches.iter().map(|b| b.iter().sum()).collect();
    let full: Vec<f64> = totals.iter().map(|t| t / nb as f64).collect();
    let leave_out: Vec<f64> = (0..nb)
        .map(|k| {
            let m: Vec<f64> = batches
                .iter()
                .zip(&totals)
                .map(|(b, t)| (t - b[k]) / (nb - 1) as f64)
                .collect();
            f(&m)
        })
        .collect();
    let lo_mean = mean(&leave_out);
    let se = ((nb - 1) as f64 / nb as f64 * leave_out.iter().map(|x| (x - lo_mean).powi(2)).sum::<f64>()).sqrt();
    let n_effective = series
        .iter()
        .map(|s| batch_means(s).n_effective)
        .fold(f64::INFINITY, f64::min);
    Estimate {
        mean: f(&full),
        std_error: se,
        n_effective,
        n_samples: n,
    }
}

/// Integrated autocorrelation time `τ = ½ + Σ_{k≥1} ρ(k)` with the
/// self-consistent window `W ≥ 6τ(W)`.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 8 {
        return f64::NAN;
    }
    let m = mean(xs);
    let c0 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for w in 1..n / 4 {
        let ck = xs[..n - w]
            .iter()
            .zip(&xs[w..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64;
        tau += ck / c0;
        if w as f64 >= 6.0 * tau {
            break;
        }
    }
    tau
}

/// Inverse-variance weighted combination of independent estimates.
pub fn merge(estimates: &[Estimate]) -> Estimate {
    let n_samples = estimates.iter().map(|e| e.n_samples).sum();
    let n_effective = estimates.iter().map(|e| e.n_effective).sum();
    if estimates.iter().any(|e| e.std_error == 0.0) {
        let exact: Vec<f64> = estimates.iter().filter(|e| e.std_error == 0.0).map(|e| e.mean).collect();
        return Estimate {
            mean: mean(&exact),
            std_error: 0.0,
            n_effective,
            n_samples,
        };
    }
    let weights: Vec<f64> = estimates.iter().map(|e| e.std_error.powi(-2)).collect();
    let total: f64 = weights.iter().sum();
    Estimate {
        mean: estimates.iter().zip(&weights).map(|(e, w)| e.mean * w).sum::<f64>() / total,
        std_error: total.powf(-0.5),
        n_effective,
        n_samples,
    }
}
