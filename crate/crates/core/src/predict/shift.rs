use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::pairs;
use crate::variational::{limit_probability, BernoulliEdgeDistribution, ConcreteEdgeDistribution};

pub const HISTOGRAM_BINS: usize = 50;

/// Per-pair comparison of prior probabilities with zero-temperature limit
/// probabilities of a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorShiftReport {
    pub n_nodes: usize,
    pub threshold: f64,
    /// Upper-triangle pairs `(i, j)` in row-major order.
    pub pairs: Vec<(usize, usize)>,
    pub prior_prob: Vec<f64>,
    pub limit_posterior_prob: Vec<f64>,
    /// `limit_posterior_prob - prior_prob`.
    pub delta: Vec<f64>,
    pub n_significant: usize,
    pub n_increased: usize,
    pub n_decreased: usize,
    pub mean_abs_delta: f64,
    /// `HISTOGRAM_BINS + 1` uniform edges on `[0, 1]`.
    pub histogram_edges: Vec<f64>,
    /// Counts of significant pairs' limit probabilities; the last bin is closed.
    pub histogram_counts: Vec<usize>,
}

/// Compares `posterior`'s limit probabilities with `prior`; a pair is
/// significant when `|delta| > threshold`.
pub fn posterior_shift(
    prior: &BernoulliEdgeDistribution,
    posterior: &ConcreteEdgeDistribution,
    threshold: f64,
) -> Result<PosteriorShiftReport> {
    if prior.n_nodes() != posterior.n_nodes() {
        return Err(Error::MismatchedSupport {
            left: prior.probs().len(),
            right: posterior.log_lambda().len(),
        });
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must be positive")));
    }
    let limit = limit_probability(posterior);
    let prior_prob = prior.probs().to_vec();
    let delta: Vec<f64> = limit.iter().zip(&prior_prob).map(|(q, p)| q - p).collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    let (mut n_increased, mut n_decreased) = (0, 0);
    for (&d, &q) in delta.iter().zip(&limit) {
        if d.abs() > threshold {
            let bin = ((q * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
            if d > 0.0 {
                n_increased += 1;
            } else {
                n_decreased += 1;
            }
        }
    }
    let mean_abs_delta = if delta.is_empty() {
        0.0
    } else {
        delta.iter().map(|d| d.abs()).sum::<f64>() / delta.len() as f64
    };
    Ok(PosteriorShiftReport {
        n_nodes: prior.n_nodes(),
        threshold,
        pairs: pairs(prior.n_nodes()).collect(),
        prior_prob,
        limit_posterior_prob: limit,
        delta,
        n_significant: n_increased + n_decreased,
        n_increased,
        n_decreased,
        mean_abs_delta,
        histogram_edges: (0..=HISTOGRAM_BINS).map(|b| b as f64 / HISTOGRAM_BINS as f64).collect(),
        histogram_counts: counts,
    })
}
