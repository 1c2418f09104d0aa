use rand::Rng;

use super::{BernoulliEdgeDistribution, ConcreteEdgeDistribution};
use crate::graph::{mirror_pairs, pairs, SymmetricBinaryAdjacency};
use crate::nn::math::sigmoid;
use crate::nn::Mat;

const UNIFORM_FLOOR: f64 = 1e-10;

/// `count` draws of `log U - log(1 - U)`, `U ~ Uniform(0, 1)` clamped to
/// `[1e-10, 1 - 1e-10]`.
pub fn logistic_noise<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(UNIFORM_FLOOR, 1.0 - UNIFORM_FLOOR);
            u.ln() - (-u).ln_1p()
        })
        .collect()
}

/// One reparameterized draw from a binary Concrete edge distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSample {
    n_nodes: usize,
    /// Logistic pre-activations `B`, kept for density evaluation.
    pub pre_activation: Vec<f64>,
    /// `sigmoid(B)`, nudged into the open unit interval.
    pub values: Vec<f64>,
}

impl RelaxedSample {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Symmetric `N x N` matrix with zero diagonal.
    pub fn to_dense(&self) -> Mat {
        mirror_pairs(&self.values, self.n_nodes)
    }
}

/// `B = (log lambda + L) / tau`, `A = sigmoid(B)` per pair.
pub fn sample_relaxed<R: Rng + ?Sized>(dist: &ConcreteEdgeDistribution, rng: &mut R) -> RelaxedSample {
    let noise = logistic_noise(dist.log_lambda.len(), rng);
    let tau = dist.temperature;
    let pre_activation: Vec<f64> = dist
        .log_lambda
        .iter()
        .zip(noise)
        .map(|(l, e)| (l + e) / tau)
        .collect();
    // At low temperature sigmoid saturates to exactly 0 or 1 in f64.
    let upper = 1.0 - f64::EPSILON / 2.0;
    let values = pre_activation
        .iter()
        .map(|&b| sigmoid(b).clamp(f64::MIN_POSITIVE, upper))
        .collect();
    RelaxedSample {
        n_nodes: dist.n_nodes,
        pre_activation,
        values,
    }
}

/// Independent Bernoulli draw per pair, mirrored.
pub fn sample_discrete<R: Rng + ?Sized>(
    dist: &BernoulliEdgeDistribution,
    rng: &mut R,
) -> SymmetricBinaryAdjacency {
    let n = dist.n_nodes;
    let mut g = SymmetricBinaryAdjacency::empty(n);
    for ((i, j), &p) in pairs(n).zip(&dist.probs) {
        if rng.gen::<f64>() < p {
            g.insert(i, j).expect("pairs are in range");
        }
    }
    g
}
