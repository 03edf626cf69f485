//! Class-agnostic pseudo-label filtering.
//!
//! Teacher confidences are modeled as a two-component 1-D Gaussian mixture
//! fitted by expectation-maximization. The high-mean component stands for
//! true objects and yields the dynamic threshold.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dense::DensePrediction;
use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;
pub const MAX_EM_ITERS: usize = 100;
pub const EM_TOLERANCE: f64 = 1e-6;
/// Below this many scores the previous threshold is kept.
pub const MIN_SCORES: usize = 20;
/// Threshold used before the first fit and when a fit is impossible.
pub const STATIC_FALLBACK: f64 = 0.5;

/// Two-component mixture; `p` is the positive (high-score) component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm1D {
    pub w_p: f64,
    pub w_n: f64,
    pub mu_p: f64,
    pub mu_n: f64,
    pub var_p: f64,
    pub var_n: f64,
}

fn log_normal(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu).powi(2) / var + (2.0 * PI * var).ln())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Gmm1D {
    /// Log densities of the two weighted components at `s`.
    fn log_parts(&self, s: f64) -> (f64, f64) {
        (
            self.w_p.ln() + log_normal(s, self.mu_p, self.var_p),
            self.w_n.ln() + log_normal(s, self.mu_n, self.var_n),
        )
    }

    /// Weighted positive-component density `w_p N(s; mu_p, var_p)`.
    pub fn positive_density(&self, s: f64) -> f64 {
        self.log_parts(s).0.exp()
    }

    /// Posterior probability that `s` belongs to the positive component.
    pub fn responsibility(&self, s: f64) -> f64 {
        let (lp, ln) = self.log_parts(s);
        (lp - log_add(lp, ln)).exp()
    }

    pub fn log_likelihood(&self, scores: &[f64]) -> f64 {
        scores
            .iter()
            .map(|&s| {
                let (lp, ln) = self.log_parts(s);
                log_add(lp, ln)
            })
            .sum()
    }
}

/// Result of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: Gmm1D,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub loglik: f64,
    /// Log-likelihood before the first and after every M-step.
    pub trace: Vec<f64>,
}

/// Fits the mixture by EM. Means start at the extreme scores, weights at 0.5
/// and both variances at the pooled sample variance.
pub fn fit_gmm(scores: &[f64]) -> Result<GmmFit> {
    if scores.len() < 2 {
        return Err(Error::DegenerateScores(format!(
            "need at least 2 scores, got {}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::DegenerateScores(format!("non-finite score {bad}")));
    }
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if hi <= lo {
        return Err(Error::DegenerateScores("all scores are equal".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);
    let mut gmm = Gmm1D {
        w_p: 0.5,
        w_n: 0.5,
        mu_p: hi,
        mu_n: lo,
        var_p: var,
        var_n: var,
    };

    let mut resp = vec![0.0; scores.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        // E-step
        let mut ll = 0.0;
        for (r, &s) in resp.iter_mut().zip(scores) {
            let (lp, ln) = gmm.log_parts(s);
            let total = log_add(lp, ln);
            ll += total;
            *r = (lp - total).exp();
        }
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() < EM_TOLERANCE);
        trace.push(ll);
        if converged || iterations == MAX_EM_ITERS {
            break;
        }
        // M-step
        let np: f64 = resp.iter().sum();
        let nn = n - np;
        let update = |weights: &mut dyn Iterator<Item = f64>, total: f64, mu: f64, var: f64| {
            if total <= 1e-12 {
                return (mu, var);
            }
            let w: Vec<f64> = weights.collect();
            let m = w.iter().zip(scores).map(|(r, s)| r * s).sum::<f64>() / total;
            let v = w.iter().zip(scores).map(|(r, s)| r * (s - m).powi(2)).sum::<f64>() / total;
            (m, v.max(VAR_FLOOR))
        };
        let (mu_p, var_p) = update(&mut resp.iter().copied(), np, gmm.mu_p, gmm.var_p);
        let (mu_n, var_n) = update(&mut resp.iter().map(|r| 1.0 - r), nn, gmm.mu_n, gmm.var_n);
        gmm = Gmm1D {
            w_p: (np / n).clamp(1e-300, 1.0),
            w_n: (nn / n).clamp(1e-300, 1.0),
            mu_p,
            mu_n,
            var_p,
            var_n,
        };
        iterations += 1;
    }
    if gmm.mu_p < gmm.mu_n {
        gmm = Gmm1D {
            w_p: gmm.w_n,
            w_n: gmm.w_p,
            mu_p: gmm.mu_n,
            mu_n: gmm.mu_p,
            var_p: gmm.var_n,
            var_n: gmm.var_p,
        };
    }
    Ok(GmmFit {
        loglik: *trace.last().expect("at least one E-step"),
        gmm,
        iterations,
        trace,
    })
}

/// How the threshold is read off a fitted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CpfPolicy {
    /// Observed score maximizing the weighted positive density.
    #[default]
    #[serde(rename = "density")]
    DensityMode,
    /// Smallest observed score whose positive responsibility reaches 0.5.
    #[serde(rename = "posterior")]
    PosteriorCrossing,
}

impl CpfPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            CpfPolicy::DensityMode => "density",
            CpfPolicy::PosteriorCrossing => "posterior",
        }
    }
}

impl std::str::FromStr for CpfPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "density" => Ok(CpfPolicy::DensityMode),
            "posterior" => Ok(CpfPolicy::PosteriorCrossing),
            other => Err(format!("unknown cpf policy `{other}` (density|posterior)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpfResult {
    #[serde(flatten)]
    pub gmm: Gmm1D,
    pub threshold: f64,
    pub policy: CpfPolicy,
    pub iterations: usize,
    pub loglik: f64,
}

pub fn dynamic_threshold(fit: &GmmFit, scores: &[f64], policy: CpfPolicy) -> CpfResult {
    let gmm = &fit.gmm;
    let threshold = match policy {
        CpfPolicy::DensityMode => {
            let mut best = (f64::NEG_INFINITY, f64::INFINITY);
            for &s in scores {
                let d = gmm.positive_density(s);
                if d > best.0 || (d == best.0 && s < best.1) {
                    best = (d, s);
                }
            }
            best.1
        }
        CpfPolicy::PosteriorCrossing => scores
            .iter()
            .copied()
            .filter(|&s| gmm.responsibility(s) >= 0.5)
            .fold(f64::INFINITY, f64::min),
    };
    let threshold = if threshold.is_finite() {
        threshold
    } else {
        scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    CpfResult {
        gmm: *gmm,
        threshold,
        policy,
        iterations: fit.iterations,
        loglik: fit.loglik,
    }
}

/// Fit and threshold in one call.
pub fn cpf(scores: &[f64], policy: CpfPolicy) -> Result<CpfResult> {
    let fit = fit_gmm(scores)?;
    Ok(dynamic_threshold(&fit, scores, policy))
}

/// Cells admitted as pseudo-labels and their loss weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    pub cells: Vec<usize>,
    pub weights: Vec<f64>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Keeps every cell whose score reaches `threshold`, weighted by its score.
pub fn filter_scores(scores: &[f64], threshold: f64) -> ActiveSet {
    let mut set = ActiveSet::default();
    for (i, &s) in scores.iter().enumerate() {
        if s >= threshold {
            set.cells.push(i);
            set.weights.push(s);
        }
    }
    set
}

pub fn filter_pseudo_labels(dense: &DensePrediction, threshold: f64) -> ActiveSet {
    filter_scores(&dense.scores(), threshold)
}

/// How pseudo-labels are thresholded during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    Static(f64),
    Dynamic(CpfPolicy),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Dynamic(CpfPolicy::DensityMode)
    }
}

/// Threshold carried across training iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    policy: ThresholdPolicy,
    current: f64,
}

impl ThresholdState {
    pub fn new(policy: ThresholdPolicy) -> Self {
        let current = match policy {
            ThresholdPolicy::Static(t) => t,
            ThresholdPolicy::Dynamic(_) => STATIC_FALLBACK,
        };
        Self { policy, current }
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    /// Refits on this iteration's pooled scores and returns the threshold to
    /// use.
    pub fn update(&mut self, scores: &[f64]) -> f64 {
        if let ThresholdPolicy::Dynamic(policy) = self.policy {
            if scores.len() >= MIN_SCORES {
                self.current = match cpf(scores, policy) {
                    Ok(r) => r.threshold,
                    Err(_) => STATIC_FALLBACK,
                };
            }
        }
        self.current
    }
}
