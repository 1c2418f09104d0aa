use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EpochRecord, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, row_normalize_features, LabeledGraph, SymmetricBinaryAdjacency};
use crate::nn::gcn::{record_l2_penalty, record_log_likelihood, record_log_probs};
use crate::nn::{adam_step, l2_penalty, AdamState, GcnParams, GcnVars, Mat, Tape};
use crate::predict::{accuracy, posterior_predictive, predict_fixed};
use crate::variational::{
    build_prior, discrete_elbo, iw_elbo, relaxed_elbo, BernoulliEdgeDistribution, ElboData,
    ElboSettings, LowRankPosterior, Mode, Objective, Parameterization, PosteriorParams,
    ScoreBaseline,
};

/// RNG streams derived from one seed.
const TRAIN_STREAM: u64 = 0;
const VALIDATION_STREAM: u64 = 1;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgcnFit {
    pub gcn: GcnParams,
    pub posterior: PosteriorParams,
    pub prior: BernoulliEdgeDistribution,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnFit {
    pub gcn: GcnParams,
    pub history: TrainHistory,
}

/// Posterior at the start of training.
///
/// The free parameterization starts exactly at the prior. A low-rank
/// posterior cannot represent an arbitrary prior, so it starts at the prior's
/// mean edge probability (through the offset `s`) with small random factors.
pub fn init_posterior<R: Rng + ?Sized>(
    prior: &BernoulliEdgeDistribution,
    parameterization: &Parameterization,
    rng: &mut R,
) -> PosteriorParams {
    match *parameterization {
        Parameterization::Free => PosteriorParams::free_from(prior),
        Parameterization::Lowrank { dz } => {
            let mut lr = LowRankPosterior::zeros(prior.n_nodes(), dz);
            for m in [&mut lr.z, &mut lr.z_tilde] {
                m.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
            }
            let mean = prior.probs().iter().sum::<f64>() / prior.probs().len().max(1) as f64;
            lr.s[[0, 0]] = crate::nn::math::logit(mean);
            PosteriorParams::LowRank(lr)
        }
    }
}

fn check_finite(values: &[f64], grads: &[&Mat], epoch: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) && grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFiniteObjective { epoch })
    }
}

/// `d l2 / d W` for the penalty `weight * (|W0|^2 [+ |W1|^2])`.
fn l2_gradients(gcn: &GcnParams, weight: f64, both_layers: bool) -> (Mat, Mat) {
    let g0 = &gcn.w0 * (2.0 * weight);
    let g1 = if both_layers {
        &gcn.w1 * (2.0 * weight)
    } else {
        Mat::zeros(gcn.w1.raw_dim())
    };
    (g0, g1)
}

/// Jointly fits the GCN weights (MAP) and the edge posterior (variational)
/// by full-batch Adam on `-(objective) + L2`.
///
/// The observed graph of `graph` defines the prior; features are
/// row-normalized; the likelihood uses the training labels. After every
/// epoch the posterior predictive (`s_pred` samples) is scored on the
/// validation nodes and the best-scoring parameters are kept; without
/// validation nodes the final parameters are returned.
pub fn train_vgcn(config: &TrainConfig, graph: &LabeledGraph) -> Result<VgcnFit> {
    config.validate()?;
    let prior = build_prior(&graph.adjacency, config.rho1, config.rho0)?;
    let features = row_normalize_features(&graph.features);
    let data = ElboData::from_graph(graph, features)?;
    let has_val = graph.masks.val.iter().any(|&m| m);

    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut val_rng = stream(config.seed, VALIDATION_STREAM);
    let mut gcn = GcnParams::init(graph.n_features(), config.hidden, graph.n_classes, &mut rng);
    let mut posterior = init_posterior(&prior, &config.parameterization, &mut rng);

    let settings = ElboSettings {
        tau: config.tau,
        tau_prior: config.tau_prior,
        beta: config.beta,
        samples: config.s_train,
        dropout: config.dropout,
    };
    let mut adam = {
        let mut tensors = vec![&gcn.w0, &gcn.w1];
        tensors.extend(posterior.tensors().into_iter().map(|(_, t)| t));
        AdamState::new(tensors)
    };
    let mut baseline = ScoreBaseline::default();
    let mut history = TrainHistory::default();
    let mut best = (gcn.clone(), posterior.clone(), f64::NEG_INFINITY);

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let est = match (config.mode, config.objective) {
            (Mode::Relaxed, Objective::Elbo) => relaxed_elbo(&gcn, &posterior, &data, &prior, &settings, &mut rng)?,
            (Mode::Relaxed, Objective::IwElbo) => iw_elbo(&gcn, &posterior, &data, &prior, &settings, &mut rng)?,
            (Mode::Discrete, _) => discrete_elbo(&gcn, &posterior, &data, &prior, &settings, &mut baseline, &mut rng)?,
        };
        let penalty = l2_penalty(&gcn, config.l2_weight, config.l2_both_layers);
        let mut grads: Vec<&Mat> = vec![&est.grad_gcn.w0, &est.grad_gcn.w1];
        grads.extend(&est.grad_posterior);
        check_finite(&[est.value, est.log_likelihood, est.kl, penalty], &grads, epoch)?;

        // Adam minimizes: gradient of -(objective) + penalty.
        let (l0, l1) = l2_gradients(&gcn, config.l2_weight, config.l2_both_layers);
        let mut descent = vec![&l0 - &est.grad_gcn.w0, &l1 - &est.grad_gcn.w1];
        descent.extend(est.grad_posterior.iter().map(|g| -g));
        {
            let mut params: Vec<&mut Mat> = vec![&mut gcn.w0, &mut gcn.w1];
            params.extend(posterior.tensors_mut());
            adam_step(&mut params, &descent, &mut adam, config.lr);
        }
        if !gcn.is_finite() || !posterior.is_finite() {
            return Err(Error::NonFiniteObjective { epoch });
        }

        let val_acc = if has_val {
            let pred = posterior_predictive(
                &gcn,
                &posterior,
                config.mode,
                &data.features,
                config.s_pred,
                config.tau,
                &mut val_rng,
            )?;
            accuracy(&pred, &graph.labels, &graph.masks.val)?
        } else {
            f64::NAN
        };
        if !has_val || val_acc > best.2 {
            best = (gcn.clone(), posterior.clone(), val_acc);
            history.best_epoch = Some(epoch);
        }
        history.records.push(EpochRecord {
            epoch,
            elbo: est.value,
            train_ll: est.log_likelihood,
            kl: est.kl,
            val_acc,
        });
        history.seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(VgcnFit {
        gcn: best.0,
        posterior: best.1,
        prior,
        history,
    })
}

/// Standard GCN training on a fixed graph: mean masked cross-entropy plus
/// L2, dropout, full-batch Adam, best validation checkpoint.
///
/// History records carry the training log-likelihood in both `elbo` and
/// `train_ll`; `kl` is zero.
pub fn train_gcn_baseline(
    config: &TrainConfig,
    graph: &LabeledGraph,
    adjacency: &SymmetricBinaryAdjacency,
) -> Result<GcnFit> {
    config.validate()?;
    if adjacency.n_nodes() != graph.n_nodes() {
        return Err(Error::InconsistentDimensions(format!(
            "adjacency over {} nodes for a graph of {}",
            adjacency.n_nodes(),
            graph.n_nodes()
        )));
    }
    let features = row_normalize_features(&graph.features);
    let data = ElboData::from_graph(graph, features)?;
    let dense = adjacency.to_dense();
    let a_hat = normalize_adjacency(&dense)?;
    let has_val = graph.masks.val.iter().any(|&m| m);
    let n_train = data.observed.len() as f64;

    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut gcn = GcnParams::init(graph.n_features(), config.hidden, graph.n_classes, &mut rng);
    let mut adam = AdamState::new([&gcn.w0, &gcn.w1]);
    let mut history = TrainHistory::default();
    let mut best = (gcn.clone(), f64::NEG_INFINITY);

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut tape = Tape::new();
        let w = GcnVars::params(&mut tape, &gcn);
        let a = tape.constant(a_hat.clone());
        let lp = record_log_probs(&mut tape, &data.features, a, w, config.dropout, &mut rng);
        let ll = record_log_likelihood(&mut tape, lp, &data.targets);
        let mean_ce = tape.scale(ll, -1.0 / n_train);
        let l2 = record_l2_penalty(&mut tape, w, config.l2_weight, config.l2_both_layers);
        let loss = tape.add(mean_ce, l2);
        let grads = tape.backward(loss);
        let g = [grads.wrt(w.w0, &tape), grads.wrt(w.w1, &tape)];
        let train_ll = tape.scalar(ll);
        check_finite(&[tape.scalar(loss)], &[&g[0], &g[1]], epoch)?;
        adam_step(&mut [&mut gcn.w0, &mut gcn.w1], &g, &mut adam, config.lr);

        let val_acc = if has_val {
            let pred = predict_fixed(&gcn, &data.features, &dense)?;
            accuracy(&pred, &graph.labels, &graph.masks.val)?
        } else {
            f64::NAN
        };
        if !has_val || val_acc > best.1 {
            best = (gcn.clone(), val_acc);
            history.best_epoch = Some(epoch);
        }
        history.records.push(EpochRecord {
            epoch,
            elbo: train_ll,
            train_ll,
            kl: 0.0,
            val_acc,
        });
        history.seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(GcnFit { gcn: best.0, history })
}
