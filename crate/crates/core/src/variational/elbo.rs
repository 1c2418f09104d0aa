//! ELBO estimators and their gradients.
//!
//! Every estimator returns the value together with gradients of that value
//! (ascent direction) with respect to the GCN weights and the posterior
//! parameters. Randomness comes only from the passed RNG, drawn in a fixed
//! order: per sample, the pair noise first and then any dropout masks.
//! Re-running with an identically seeded RNG reuses the same random numbers,
//! which is what finite-difference checks rely on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::logistic_noise;
use super::{
    column, record_kl_from_logits, sample_discrete, BernoulliEdgeDistribution, Mode,
    PosteriorParams, PosteriorVars,
};
use crate::error::{Error, Result};
use crate::graph::{mask_indices, n_pairs, normalize_adjacency, LabeledGraph};
use crate::nn::gcn::{masked_targets, record_log_likelihood, record_log_probs};
use crate::nn::math::sigmoid;
use crate::nn::{gcn_forward, GcnParams, GcnVars, Mat, Tape, Var};

/// Inputs shared by all likelihood evaluations: features and the labels
/// of the nodes that enter the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboData {
    pub features: Mat,
    /// One-hot labels, zeroed outside the observed set.
    pub targets: Mat,
    pub observed: Vec<usize>,
}

impl ElboData {
    pub fn new(features: Mat, labels: &Mat, mask: &[bool]) -> Result<Self> {
        if labels.nrows() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} label rows",
                features.nrows(),
                labels.nrows()
            )));
        }
        let targets = masked_targets(labels, mask)?;
        Ok(Self {
            features,
            targets,
            observed: mask_indices(mask),
        })
    }

    /// Observed labels are the graph's training nodes.
    pub fn from_graph(graph: &LabeledGraph, features: Mat) -> Result<Self> {
        Self::new(features, &graph.one_hot(), &graph.masks.train)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.targets.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Elbo,
    IwElbo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboSettings {
    /// Posterior temperature.
    pub tau: f64,
    /// Prior temperature.
    pub tau_prior: f64,
    /// Weight of the KL (or log density ratio) term.
    pub beta: f64,
    pub samples: usize,
    /// Dropout rate used in the GCN forward passes; `0` for evaluation.
    pub dropout: f64,
}

impl ElboSettings {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("need at least one sample".into()));
        }
        if !(self.tau > 0.0 && self.tau_prior > 0.0) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!("beta {} must be >= 0", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Value and gradients of an ELBO estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    /// Mean log-likelihood of the observed labels over the samples.
    pub log_likelihood: f64,
    /// Analytic KL (discrete) or mean log density ratio (relaxed).
    pub kl: f64,
    /// d value / d theta.
    pub grad_gcn: GcnParams,
    /// d value / d phi, ordered as [`PosteriorParams::tensors`].
    pub grad_posterior: Vec<Mat>,
}

pub type DiscreteElboEstimate = ElboEstimate;

fn check_support(posterior: &PosteriorParams, prior: &BernoulliEdgeDistribution, data: &ElboData) -> Result<()> {
    let n = data.n_nodes();
    if prior.n_nodes() != n {
        return Err(Error::MismatchedSupport {
            left: n_pairs(n),
            right: prior.probs().len(),
        });
    }
    if posterior.n_nodes() != n {
        return Err(Error::MismatchedSupport {
            left: n_pairs(posterior.n_nodes()),
            right: n_pairs(n),
        });
    }
    Ok(())
}

/// Records `sum_k log Logistic(x_k | loc_k, scale)` given `u = (x - loc) / scale`.
fn record_logistic_sum(tape: &mut Tape, u: Var, scale: f64) -> Var {
    let neg = tape.neg(u);
    let sp = tape.softplus(neg);
    let sp2 = tape.scale(sp, 2.0);
    let both = tape.add(u, sp2);
    let total = tape.sum(both);
    let count = tape.value(u).len() as f64;
    let negated = tape.neg(total);
    tape.add_const(negated, &Mat::from_elem((1, 1), -count * scale.ln()))
}

fn relaxed_on_tape<R: Rng + ?Sized>(
    gcn: &GcnParams,
    posterior: &PosteriorParams,
    data: &ElboData,
    prior: &BernoulliEdgeDistribution,
    settings: &ElboSettings,
    importance_weighted: bool,
    rng: &mut R,
) -> Result<ElboEstimate> {
    settings.validate()?;
    check_support(posterior, prior, data)?;
    let n = data.n_nodes();
    let pairs = n_pairs(n);
    let inv_tau = 1.0 / settings.tau;
    let inv_tau_prior = 1.0 / settings.tau_prior;

    let mut tape = Tape::new();
    let w = GcnVars::params(&mut tape, gcn);
    let phi = PosteriorVars::params(&mut tape, posterior);
    let log_lambda = phi.record_pair_logits(&mut tape, Mode::Relaxed);
    let prior_loc = column(&prior.logits()) * inv_tau_prior;

    let mut lls = Vec::with_capacity(settings.samples);
    let mut ratios = Vec::with_capacity(settings.samples);
    let mut per_sample = Vec::with_capacity(settings.samples);
    for _ in 0..settings.samples {
        let noise = column(&logistic_noise(pairs, rng));
        let shifted = tape.add_const(log_lambda, &noise);
        let b = tape.scale(shifted, inv_tau);
        let a = tape.sigmoid(b);
        let adj = tape.mirror_pairs(a, n);
        let a_hat = tape.normalize_adjacency(adj);
        let lp = record_log_probs(&mut tape, &data.features, a_hat, w, settings.dropout, rng);

        // Posterior g: location log(lambda) / tau, scale 1 / tau.
        let loc_q = tape.scale(log_lambda, inv_tau);
        let centred_q = tape.sub(b, loc_q);
        let u_q = tape.scale(centred_q, settings.tau);
        let log_g = record_logistic_sum(&mut tape, u_q, inv_tau);
        // Prior f: location log(lambda°) / tau_o, scale 1 / tau_o.
        let centred_f = tape.add_const(b, &-&prior_loc);
        let u_f = tape.scale(centred_f, settings.tau_prior);
        let log_f = record_logistic_sum(&mut tape, u_f, inv_tau_prior);
        let ratio = tape.sub(log_g, log_f);
        ratios.push(tape.scalar(ratio));

        if importance_weighted {
            let picked = tape.mul_const(lp, data.targets.clone());
            let rows = tape.select_rows(picked, &data.observed);
            let ll_nodes = tape.row_sum(rows);
            lls.push(tape.value(ll_nodes).sum());
            let share = -settings.beta / data.observed.len() as f64;
            let r = tape.scale(ratio, share);
            per_sample.push(tape.add_broadcast(ll_nodes, r));
        } else {
            let ll = record_log_likelihood(&mut tape, lp, &data.targets);
            lls.push(tape.scalar(ll));
            let penalty = tape.scale(ratio, -settings.beta);
            per_sample.push(tape.add(ll, penalty));
        }
    }

    let objective = if importance_weighted {
        let table = tape.hstack(&per_sample);
        let lme = tape.log_mean_exp_rows(table);
        tape.sum(lme)
    } else {
        let mut total = per_sample[0];
        for &t in &per_sample[1..] {
            total = tape.add(total, t);
        }
        tape.scale(total, 1.0 / settings.samples as f64)
    };

    let grads = tape.backward(objective);
    let s = settings.samples as f64;
    Ok(ElboEstimate {
        value: tape.scalar(objective),
        log_likelihood: lls.iter().sum::<f64>() / s,
        kl: ratios.iter().sum::<f64>() / s,
        grad_gcn: GcnParams {
            w0: grads.wrt(w.w0, &tape),
            w1: grads.wrt(w.w1, &tape),
        },
        grad_posterior: phi.gradients(&grads, &tape),
    })
}

/// Reparameterized ELBO with binary Concrete posterior and prior:
///
/// `(1/S) sum_s [ log p(Y | X, sigmoid(B_s)) - beta (log g(B_s) - log f(B_s)) ]`
///
/// where `g` and `f` are the logistic densities of the posterior and the
/// relaxed prior (`log lambda° = logit(rho°)`, temperature `tau_prior`).
pub fn relaxed_elbo<R: Rng + ?Sized>(
    gcn: &GcnParams,
    posterior: &PosteriorParams,
    data: &ElboData,
    prior: &BernoulliEdgeDistribution,
    settings: &ElboSettings,
    rng: &mut R,
) -> Result<ElboEstimate> {
    relaxed_on_tape(gcn, posterior, data, prior, settings, false, rng)
}

/// Importance-weighted bound over `S` shared samples:
///
/// `sum_n LME_s [ log p(y_n | X, A_s) - (beta / |obs|) log(q/p)(A_s) ]`.
///
/// With `beta = 1` this bounds the log evidence at least as tightly as
/// [`relaxed_elbo`]; `kl` reports the mean log density ratio.
pub fn iw_elbo<R: Rng + ?Sized>(
    gcn: &GcnParams,
    posterior: &PosteriorParams,
    data: &ElboData,
    prior: &BernoulliEdgeDistribution,
    settings: &ElboSettings,
    rng: &mut R,
) -> Result<ElboEstimate> {
    relaxed_on_tape(gcn, posterior, data, prior, settings, true, rng)
}

/// Running mean of past log-likelihood values, used as the control variate
/// of the score-function estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreBaseline {
    mean: f64,
    count: u64,
}

impl ScoreBaseline {
    /// Current baseline; zero before any update.
    pub fn value(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, values: &[f64]) {
        for &v in values {
            self.count += 1;
            self.mean += (v - self.mean) / self.count as f64;
        }
    }
}

/// Discrete (Bernoulli) ELBO: Monte Carlo log-likelihood minus the analytic KL.
///
/// The posterior gradient uses the score function with the baseline taken
/// before this call; the baseline is then updated with this call's values.
/// The GCN gradient is the average of the per-sample backprop gradients.
pub fn discrete_elbo<R: Rng + ?Sized>(
    gcn: &GcnParams,
    posterior: &PosteriorParams,
    data: &ElboData,
    prior: &BernoulliEdgeDistribution,
    settings: &ElboSettings,
    baseline: &mut ScoreBaseline,
    rng: &mut R,
) -> Result<DiscreteElboEstimate> {
    settings.validate()?;
    check_support(posterior, prior, data)?;
    let n = data.n_nodes();
    let logits = posterior.pair_logits(Mode::Discrete);
    let q = BernoulliEdgeDistribution::from_logits(n, &logits)?;
    let rho: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let c = baseline.value();
    let s = settings.samples as f64;

    let mut grad_gcn = GcnParams {
        w0: Mat::zeros(gcn.w0.raw_dim()),
        w1: Mat::zeros(gcn.w1.raw_dim()),
    };
    let mut coef = vec![0.0; rho.len()];
    let mut lls = Vec::with_capacity(settings.samples);
    for _ in 0..settings.samples {
        let graph = sample_discrete(&q, rng);
        let a_hat = normalize_adjacency(&graph.to_dense())?;
        let mut tape = Tape::new();
        let w = GcnVars::params(&mut tape, gcn);
        let a = tape.constant(a_hat);
        let lp = record_log_probs(&mut tape, &data.features, a, w, settings.dropout, rng);
        let ll = record_log_likelihood(&mut tape, lp, &data.targets);
        let grads = tape.backward(ll);
        grad_gcn.w0.scaled_add(1.0 / s, &grads.wrt(w.w0, &tape));
        grad_gcn.w1.scaled_add(1.0 / s, &grads.wrt(w.w1, &tape));

        let value = tape.scalar(ll);
        let weight = (value - c) / s;
        for ((k, on), r) in graph.pair_indicators().into_iter().enumerate().zip(&rho) {
            coef[k] += weight * (f64::from(u8::from(on)) - r);
        }
        lls.push(value);
    }

    // Surrogate whose gradient is the score-function estimate minus beta * dKL.
    let mut tape = Tape::new();
    let phi = PosteriorVars::params(&mut tape, posterior);
    let l = phi.record_pair_logits(&mut tape, Mode::Discrete);
    let weighted = tape.mul_const(l, column(&coef));
    let linear = tape.sum(weighted);
    let kl = record_kl_from_logits(&mut tape, l, &prior.logits());
    let penalty = tape.scale(kl, -settings.beta);
    let surrogate = tape.add(linear, penalty);
    let grads = tape.backward(surrogate);

    let kl_value = tape.scalar(kl);
    let mean_ll = lls.iter().sum::<f64>() / s;
    baseline.update(&lls);
    Ok(ElboEstimate {
        value: mean_ll - settings.beta * kl_value,
        log_likelihood: mean_ll,
        kl: kl_value,
        grad_gcn,
        grad_posterior: phi.gradients(&grads, &tape),
    })
}

/// `log p(Y_obs | X, A)` in evaluation mode for a dense adjacency.
pub fn log_likelihood(gcn: &GcnParams, adjacency: &Mat, data: &ElboData) -> Result<f64> {
    let a_hat = normalize_adjacency(adjacency)?;
    // Dropout is off, so the generator is never drawn from.
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let probs = gcn_forward(&data.features, &a_hat, gcn, 0.0, false, &mut unused)?;
    Ok(data
        .targets
        .iter()
        .zip(probs.iter())
        .filter(|(&t, _)| t != 0.0)
        .map(|(t, p)| t * p.ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variational::{build_prior, LowRankPosterior};
    use crate::graph::SymmetricBinaryAdjacency;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        gcn: GcnParams,
        data: ElboData,
        prior: BernoulliEdgeDistribution,
    }

    fn toy(n: usize, seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Mat::from_shape_simple_fn((n, 4), || rng.gen_range(0.0..1.0));
        let labels = Mat::from_shape_fn((n, 2), |(i, c)| f64::from(u8::from(i % 2 == c)));
        let mask: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
        let observed = SymmetricBinaryAdjacency::from_pairs(n, (0..n - 1).map(|i| (i, i + 1))).unwrap();
        Toy {
            gcn: GcnParams::init(4, 3, 2, &mut rng),
            data: ElboData::new(features, &labels, &mask).unwrap(),
            prior: build_prior(&observed, 0.8, 0.1).unwrap(),
        }
    }

    fn settings(samples: usize, dropout: f64) -> ElboSettings {
        ElboSettings {
            tau: 0.5,
            tau_prior: 0.3,
            beta: 0.7,
            samples,
            dropout,
        }
    }

    fn perturbed_logits(prior: &BernoulliEdgeDistribution, seed: u64) -> PosteriorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: Vec<f64> = prior.logits().iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
        PosteriorParams::Free { logits: column(&l) }
    }

    type Estimator = fn(
        &GcnParams,
        &PosteriorParams,
        &ElboData,
        &BernoulliEdgeDistribution,
        &ElboSettings,
        &mut ChaCha8Rng,
    ) -> Result<ElboEstimate>;

    /// Central differences with common random numbers against the tape gradient.
    fn fd_check(estimator: Estimator, posterior: PosteriorParams, dropout: f64) {
        let t = toy(5, 1);
        let s = settings(3, dropout);
        let run = |g: &GcnParams, p: &PosteriorParams| {
            estimator(g, p, &t.data, &t.prior, &s, &mut ChaCha8Rng::seed_from_u64(77)).unwrap()
        };
        let base = run(&t.gcn, &posterior);
        let h = 1e-6;
        let close = |fd: f64, ad: f64| {
            assert!(
                (fd - ad).abs() <= 1e-5 * fd.abs().max(ad.abs()) + 1e-7,
                "fd {fd} ad {ad}"
            );
        };
        for layer in 0..2 {
            let len = if layer == 0 { t.gcn.w0.len() } else { t.gcn.w1.len() };
            for k in 0..len {
                let shifted = |d: f64| {
                    let mut g = t.gcn.clone();
                    let w = if layer == 0 { &mut g.w0 } else { &mut g.w1 };
                    w.as_slice_mut().unwrap()[k] += d;
                    run(&g, &posterior).value
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let ad = if layer == 0 { &base.grad_gcn.w0 } else { &base.grad_gcn.w1 };
                close(fd, ad.as_slice().unwrap()[k]);
            }
        }
        for (ti, grad) in base.grad_posterior.iter().enumerate() {
            for k in 0..grad.len() {
                let shifted = |d: f64| {
                    let mut p = posterior.clone();
                    p.tensors_mut()[ti].as_slice_mut().unwrap()[k] += d;
                    run(&t.gcn, &p).value
                };
                close((shifted(h) - shifted(-h)) / (2.0 * h), grad.as_slice().unwrap()[k]);
            }
        }
    }

    fn lowrank(seed: u64) -> PosteriorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lr = LowRankPosterior::zeros(5, 2);
        for m in [&mut lr.z, &mut lr.z_tilde, &mut lr.b, &mut lr.s] {
            m.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        PosteriorParams::LowRank(lr)
    }

    #[test]
    fn relaxed_gradients_match_differences() {
        let t = toy(5, 1);
        fd_check(relaxed_elbo, perturbed_logits(&t.prior, 2), 0.0);
        fd_check(relaxed_elbo, perturbed_logits(&t.prior, 3), 0.4);
        fd_check(relaxed_elbo, lowrank(4), 0.0);
    }

    #[test]
    fn iw_gradients_match_differences() {
        let t = toy(5, 1);
        fd_check(iw_elbo, perturbed_logits(&t.prior, 5), 0.0);
        fd_check(iw_elbo, lowrank(6), 0.3);
    }

    #[test]
    fn relaxed_lowrank_ignores_second_factor() {
        let t = toy(5, 1);
        let est = relaxed_elbo(&t.gcn, &lowrank(7), &t.data, &t.prior, &settings(2, 0.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(est.grad_posterior[1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_beta_is_monte_carlo_likelihood() {
        let t = toy(5, 1);
        let mut s = settings(4, 0.0);
        s.beta = 0.0;
        let phi = perturbed_logits(&t.prior, 8);
        let est = relaxed_elbo(&t.gcn, &phi, &t.data, &t.prior, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(est.value, est.log_likelihood);

        // Same draws evaluated outside the tape.
        let q = phi.to_concrete(Mode::Relaxed, s.tau).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean: f64 = (0..4)
            .map(|_| log_likelihood(&t.gcn, &super::super::sample_relaxed(&q, &mut rng).to_dense(), &t.data).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((mean - est.value).abs() < 1e-10, "{mean} vs {}", est.value);
    }

    #[test]
    fn single_sample_iw_equals_elbo() {
        let t = toy(5, 1);
        let s = settings(1, 0.0);
        let phi = perturbed_logits(&t.prior, 10);
        let a = relaxed_elbo(&t.gcn, &phi, &t.data, &t.prior, &ElboSettings { beta: 1.0, ..s }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = iw_elbo(&t.gcn, &phi, &t.data, &t.prior, &ElboSettings { beta: 1.0, ..s }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
    }

    #[test]
    fn discrete_kl_term_vanishes_at_prior() {
        let t = toy(5, 1);
        let phi = PosteriorParams::free_from(&t.prior);
        let mut baseline = ScoreBaseline::default();
        let est = discrete_elbo(&t.gcn, &phi, &t.data, &t.prior, &settings(8, 0.0), &mut baseline, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(est.kl.abs() < 1e-12);
        assert_eq!(est.value, est.log_likelihood);
        assert_eq!(baseline.count(), 8);
        assert!((baseline.value() - est.log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn baseline_is_running_mean() {
        let mut b = ScoreBaseline::default();
        assert_eq!(b.value(), 0.0);
        b.update(&[1.0, 2.0]);
        b.update(&[6.0]);
        assert!((b.value() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_settings_and_support() {
        let t = toy(5, 1);
        let phi = PosteriorParams::free_from(&t.prior);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = ElboSettings { samples: 0, ..settings(1, 0.0) };
        assert!(relaxed_elbo(&t.gcn, &phi, &t.data, &t.prior, &bad, &mut rng).is_err());
        let other = toy(6, 1);
        assert!(matches!(
            relaxed_elbo(&t.gcn, &phi, &other.data, &other.prior, &settings(1, 0.0), &mut rng),
            Err(Error::MismatchedSupport { .. })
        ));
    }
}
