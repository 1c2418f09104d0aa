//! Brute-force enumeration over every graph on a small node set.

use super::{kl_bernoulli, log_likelihood, BernoulliEdgeDistribution, ElboData};
use crate::error::{Error, Result};
use crate::graph::{mirror_pairs, n_pairs};
use crate::nn::math::log_sum_exp;
use crate::nn::GcnParams;

/// Largest number of node pairs enumerated (2^20 graphs).
pub const ENUMERATION_LIMIT: usize = 20;

/// Calls `visit(log q(A), dense A)` for every graph on `dist`'s nodes.
fn for_each_graph(
    dist: &BernoulliEdgeDistribution,
    mut visit: impl FnMut(f64, &crate::nn::Mat) -> Result<()>,
) -> Result<()> {
    let n = dist.n_nodes();
    let pairs = n_pairs(n);
    if pairs > ENUMERATION_LIMIT {
        return Err(Error::TooLargeToEnumerate {
            pairs,
            limit: ENUMERATION_LIMIT,
        });
    }
    let probs = dist.probs();
    let mut values = vec![0.0; pairs];
    for bits in 0u64..(1 << pairs) {
        let mut log_q = 0.0;
        for (k, (v, &p)) in values.iter_mut().zip(probs).enumerate() {
            if bits >> k & 1 == 1 {
                *v = 1.0;
                log_q += p.ln();
            } else {
                *v = 0.0;
                log_q += (-p).ln_1p();
            }
        }
        visit(log_q, &mirror_pairs(&values, n))?;
    }
    Ok(())
}

/// `log sum_A p(A) p(Y_obs | X, A)`.
pub fn exact_log_evidence(gcn: &GcnParams, prior: &BernoulliEdgeDistribution, data: &ElboData) -> Result<f64> {
    let mut terms = Vec::with_capacity(1 << n_pairs(prior.n_nodes()).min(ENUMERATION_LIMIT));
    for_each_graph(prior, |log_p, a| {
        terms.push(log_p + log_likelihood(gcn, a, data)?);
        Ok(())
    })?;
    Ok(log_sum_exp(&terms))
}

/// `sum_A q(A) log p(Y_obs | X, A) - KL(q || p)`.
pub fn exact_discrete_elbo(
    gcn: &GcnParams,
    posterior: &BernoulliEdgeDistribution,
    prior: &BernoulliEdgeDistribution,
    data: &ElboData,
) -> Result<f64> {
    let kl = kl_bernoulli(posterior, prior)?;
    let mut expected = 0.0;
    for_each_graph(posterior, |log_q, a| {
        expected += log_q.exp() * log_likelihood(gcn, a, data)?;
        Ok(())
    })?;
    Ok(expected - kl)
}
