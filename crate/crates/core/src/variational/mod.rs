//! Priors and variational posteriors over the adjacency matrix.
//!
//! All distributions factorize over the upper-triangle pairs `i < j` (see
//! [`crate::graph::pairs`]) and are mirrored into symmetric matrices when
//! sampled. Free posteriors carry one logit per pair: `logit(rho)` in the
//! discrete case and `log(lambda)` in the relaxed case. These coincide at
//! initialization because the relaxed prior uses `log(lambda°) = logit(rho°)`.

mod elbo;
mod exact;
mod sample;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{n_pairs, SymmetricBinaryAdjacency};
use crate::nn::math::{logit, sigmoid, softplus};
use crate::nn::{Mat, Tape, Var};

pub use elbo::{
    discrete_elbo, iw_elbo, log_likelihood, relaxed_elbo, DiscreteElboEstimate, ElboData,
    ElboEstimate, ElboSettings, Objective, ScoreBaseline,
};
pub use exact::{exact_discrete_elbo, exact_log_evidence, ENUMERATION_LIMIT};
pub use sample::{logistic_noise, sample_discrete, sample_relaxed, RelaxedSample};

pub const PROB_FLOOR: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Independent Bernoulli per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliEdgeDistribution {
    n_nodes: usize,
    probs: Vec<f64>,
}

impl BernoulliEdgeDistribution {
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn new(n_nodes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_pairs(n_nodes) {
            return Err(Error::ShapeMismatch(format!(
                "{} probabilities for {} pairs",
                probs.len(),
                n_pairs(n_nodes)
            )));
        }
        Ok(Self {
            n_nodes,
            probs: probs.into_iter().map(clamp_prob).collect(),
        })
    }

    pub fn from_logits(n_nodes: usize, logits: &[f64]) -> Result<Self> {
        Self::new(n_nodes, logits.iter().map(|&l| sigmoid(l)).collect())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| logit(p)).collect()
    }

    /// Log-probability of a binary adjacency.
    pub fn log_prob(&self, graph: &SymmetricBinaryAdjacency) -> f64 {
        graph
            .pair_indicators()
            .iter()
            .zip(&self.probs)
            .map(|(&a, &p)| if a { p.ln() } else { (-p).ln_1p() })
            .sum()
    }
}

/// Binary Concrete per pair with a shared temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteEdgeDistribution {
    n_nodes: usize,
    log_lambda: Vec<f64>,
    temperature: f64,
}

impl ConcreteEdgeDistribution {
    pub fn new(n_nodes: usize, log_lambda: Vec<f64>, temperature: f64) -> Result<Self> {
        if log_lambda.len() != n_pairs(n_nodes) {
            return Err(Error::ShapeMismatch(format!(
                "{} locations for {} pairs",
                log_lambda.len(),
                n_pairs(n_nodes)
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be > 0")));
        }
        if let Some(bad) = log_lambda.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite log location {bad}")));
        }
        Ok(Self {
            n_nodes,
            log_lambda,
            temperature,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Smoothed prior: `rho1_bar` on observed edges, `rho0_bar` elsewhere.
pub fn build_prior(
    observed: &SymmetricBinaryAdjacency,
    rho1_bar: f64,
    rho0_bar: f64,
) -> Result<BernoulliEdgeDistribution> {
    for (name, v) in [("rho1_bar", rho1_bar), ("rho0_bar", rho0_bar)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidSmoothing(format!("{name} = {v}")));
        }
    }
    let probs = observed
        .pair_indicators()
        .into_iter()
        .map(|e| if e { rho1_bar } else { rho0_bar })
        .collect();
    BernoulliEdgeDistribution::new(observed.n_nodes(), probs)
}

/// Binary Concrete with `log(lambda) = logit(rho)`, so its zero-temperature
/// limit is the original Bernoulli.
pub fn relax(dist: &BernoulliEdgeDistribution, temperature: f64) -> Result<ConcreteEdgeDistribution> {
    ConcreteEdgeDistribution::new(dist.n_nodes, dist.logits(), temperature)
}

/// `lambda / (1 + lambda)` per pair: `P(A_ij = 1)` as the temperature goes to zero.
pub fn limit_probability(dist: &ConcreteEdgeDistribution) -> Vec<f64> {
    dist.log_lambda.iter().map(|&l| sigmoid(l)).collect()
}

/// `KL(q || p)` summed over pairs.
pub fn kl_bernoulli(q: &BernoulliEdgeDistribution, p: &BernoulliEdgeDistribution) -> Result<f64> {
    if q.probs.len() != p.probs.len() {
        return Err(Error::MismatchedSupport {
            left: q.probs.len(),
            right: p.probs.len(),
        });
    }
    Ok(q.probs
        .iter()
        .zip(&p.probs)
        .map(|(&r, &r0)| r * (r / r0).ln() + (1.0 - r) * ((1.0 - r) / (1.0 - r0)).ln())
        .sum())
}

/// Log density of `Logistic(location, scale)` at `x`.
pub fn logistic_log_density(x: f64, location: f64, scale: f64) -> f64 {
    let u = (x - location) / scale;
    -u - scale.ln() - 2.0 * softplus(-u)
}

/// Discrete (Bernoulli) or relaxed (binary Concrete) posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Relaxed,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Parameterization {
    /// One parameter per pair.
    #[default]
    Free,
    /// Pair parameters from node embeddings of width `dz`.
    Lowrank { dz: usize },
}

/// Node embeddings, biases and a global shift.
///
/// Discrete mode: `rho_ij = sigmoid(z_i . zt_j + b_i + b_j + s)`.
/// Relaxed mode ties `zt = z`: `log(lambda_ij) = z_i . z_j + b_i + b_j + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPosterior {
    /// `N x dz`
    pub z: Mat,
    /// `N x dz`; unused in relaxed mode.
    pub z_tilde: Mat,
    /// `N x 1`
    pub b: Mat,
    /// `1 x 1`
    pub s: Mat,
}

impl LowRankPosterior {
    pub fn zeros(n_nodes: usize, dz: usize) -> Self {
        Self {
            z: Mat::zeros((n_nodes, dz)),
            z_tilde: Mat::zeros((n_nodes, dz)),
            b: Mat::zeros((n_nodes, 1)),
            s: Mat::zeros((1, 1)),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.z.nrows()
    }

    pub fn dz(&self) -> usize {
        self.z.ncols()
    }
}

/// Variational parameters `phi`.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorParams {
    /// `pairs x 1` logits.
    Free { logits: Mat },
    LowRank(LowRankPosterior),
}

impl PosteriorParams {
    /// Free posterior equal to `prior`.
    pub fn free_from(prior: &BernoulliEdgeDistribution) -> Self {
        let l = prior.logits();
        PosteriorParams::Free {
            logits: Mat::from_shape_vec((l.len(), 1), l).unwrap(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            PosteriorParams::Free { logits } => {
                // pairs = n(n-1)/2
                let p = logits.nrows() as f64;
                ((1.0 + (1.0 + 8.0 * p).sqrt()) / 2.0).round() as usize
            }
            PosteriorParams::LowRank(lr) => lr.n_nodes(),
        }
    }

    /// Named tensors, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        match self {
            PosteriorParams::Free { logits } => vec![("logits", logits)],
            PosteriorParams::LowRank(lr) => vec![
                ("z", &lr.z),
                ("z_tilde", &lr.z_tilde),
                ("b", &lr.b),
                ("s", &lr.s),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        match self {
            PosteriorParams::Free { logits } => vec![logits],
            PosteriorParams::LowRank(lr) => vec![&mut lr.z, &mut lr.z_tilde, &mut lr.b, &mut lr.s],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Pair logits: `logit(rho)` in discrete mode, `log(lambda)` in relaxed mode.
    pub fn pair_logits(&self, mode: Mode) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = PosteriorVars::constants(&mut tape, self);
        let l = vars.record_pair_logits(&mut tape, mode);
        tape.value(l).iter().copied().collect()
    }

    pub fn to_bernoulli(&self, mode: Mode) -> Result<BernoulliEdgeDistribution> {
        BernoulliEdgeDistribution::from_logits(self.n_nodes(), &self.pair_logits(mode))
    }

    pub fn to_concrete(&self, mode: Mode, temperature: f64) -> Result<ConcreteEdgeDistribution> {
        ConcreteEdgeDistribution::new(self.n_nodes(), self.pair_logits(mode), temperature)
    }
}

/// Edge parameters induced by a low-rank posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeParams {
    Bernoulli(BernoulliEdgeDistribution),
    Concrete(ConcreteEdgeDistribution),
}

pub fn lowrank_to_edge_params(p: &LowRankPosterior, mode: Mode, temperature: f64) -> Result<EdgeParams> {
    let params = PosteriorParams::LowRank(p.clone());
    Ok(match mode {
        Mode::Discrete => EdgeParams::Bernoulli(params.to_bernoulli(mode)?),
        Mode::Relaxed => EdgeParams::Concrete(params.to_concrete(mode, temperature)?),
    })
}

/// Handles to the posterior parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorVars {
    Free { logits: Var },
    LowRank { z: Var, zt: Var, b: Var, s: Var },
}

impl PosteriorVars {
    fn record(tape: &mut Tape, params: &PosteriorParams, differentiable: bool) -> Self {
        let mut leaf = |m: &Mat| {
            if differentiable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        match params {
            PosteriorParams::Free { logits } => PosteriorVars::Free {
                logits: leaf(logits),
            },
            PosteriorParams::LowRank(lr) => PosteriorVars::LowRank {
                z: leaf(&lr.z),
                zt: leaf(&lr.z_tilde),
                b: leaf(&lr.b),
                s: leaf(&lr.s),
            },
        }
    }

    pub fn params(tape: &mut Tape, params: &PosteriorParams) -> Self {
        Self::record(tape, params, true)
    }

    pub fn constants(tape: &mut Tape, params: &PosteriorParams) -> Self {
        Self::record(tape, params, false)
    }

    /// `pairs x 1` node of pair logits.
    pub fn record_pair_logits(&self, tape: &mut Tape, mode: Mode) -> Var {
        match *self {
            PosteriorVars::Free { logits } => logits,
            PosteriorVars::LowRank { z, zt, b, s } => {
                let other = if mode == Mode::Relaxed { z } else { zt };
                tape.pair_logits(z, other, b, s)
            }
        }
    }

    pub fn leaves(&self) -> Vec<Var> {
        match *self {
            PosteriorVars::Free { logits } => vec![logits],
            PosteriorVars::LowRank { z, zt, b, s } => vec![z, zt, b, s],
        }
    }

    /// Gradients in the order of [`PosteriorParams::tensors`].
    pub fn gradients(&self, grads: &crate::nn::Gradients, tape: &Tape) -> Vec<Mat> {
        self.leaves().into_iter().map(|v| grads.wrt(v, tape)).collect()
    }
}

/// Records the analytic Bernoulli KL for posterior logits against prior logits.
pub(crate) fn record_kl_from_logits(tape: &mut Tape, logits: Var, prior_logits: &[f64]) -> Var {
    let p = prior_logits.len();
    let log_p1 = Mat::from_shape_fn((p, 1), |(k, _)| -softplus(-prior_logits[k]));
    let log_p0 = Mat::from_shape_fn((p, 1), |(k, _)| -softplus(prior_logits[k]));
    // log rho = -softplus(-l), log(1 - rho) = -softplus(l)
    let neg = tape.neg(logits);
    let sp_neg = tape.softplus(neg);
    let sp_pos = tape.softplus(logits);
    let rho = tape.sigmoid(logits);
    let one_minus = tape.sigmoid(neg);
    let log_rho = tape.neg(sp_neg);
    let log_one_minus = tape.neg(sp_pos);
    let d1 = tape.add_const(log_rho, &-&log_p1);
    let d0 = tape.add_const(log_one_minus, &-&log_p0);
    let t1 = tape.mul(rho, d1);
    let t0 = tape.mul(one_minus, d0);
    let both = tape.add(t1, t0);
    tape.sum(both)
}

pub(crate) fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
}
