//! Posterior-predictive classification, metrics and posterior-shift analysis.

mod shift;

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::normalize_adjacency;
use crate::nn::{gcn_forward, GcnParams, Mat};
use crate::variational::{sample_discrete, sample_relaxed, Mode, PosteriorParams};

pub use shift::{posterior_shift, PosteriorShiftReport, HISTOGRAM_BINS};

/// Averaged class probabilities and their row-wise argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub probs: Mat,
    pub predicted_class: Vec<usize>,
    pub n_samples_used: usize,
}

/// Index of the largest entry; ties go to the smallest index.
fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = c;
        }
    }
    best
}

impl PredictiveResult {
    pub fn from_probs(probs: Mat, n_samples_used: usize) -> Self {
        let predicted_class = probs.rows().into_iter().map(argmax).collect();
        Self {
            probs,
            predicted_class,
            n_samples_used,
        }
    }

    /// `node_id,predicted_class,p0,p1,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_id,predicted_class");
        for c in 0..self.probs.ncols() {
            write!(out, ",p{c}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.probs.rows().into_iter().enumerate() {
            write!(out, "{i},{}", self.predicted_class[i]).unwrap();
            for p in row {
                write!(out, ",{p}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// GCN prediction on a fixed binary or weighted adjacency, no dropout.
pub fn predict_fixed(gcn: &GcnParams, features: &Mat, adjacency: &Mat) -> Result<PredictiveResult> {
    let a_hat = normalize_adjacency(adjacency)?;
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let probs = gcn_forward(features, &a_hat, gcn, 0.0, false, &mut unused)?;
    Ok(PredictiveResult::from_probs(probs, 1))
}

/// Monte Carlo posterior predictive `(1/S) sum_s p(Y | X, A_s)` with
/// `A_s ~ q`. Relaxed posteriors are sampled at temperature `tau`; the
/// samples are drawn one after another from `rng`.
pub fn posterior_predictive<R: Rng + ?Sized>(
    gcn: &GcnParams,
    posterior: &PosteriorParams,
    mode: Mode,
    features: &Mat,
    samples: usize,
    tau: f64,
    rng: &mut R,
) -> Result<PredictiveResult> {
    if samples == 0 {
        return Err(Error::InvalidConfig("need at least one predictive sample".into()));
    }
    if posterior.n_nodes() != features.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "posterior over {} nodes, features for {}",
            posterior.n_nodes(),
            features.nrows()
        )));
    }
    let mut sum = Mat::zeros((features.nrows(), gcn.n_classes()));
    match mode {
        Mode::Relaxed => {
            let q = posterior.to_concrete(mode, tau)?;
            for _ in 0..samples {
                let a = sample_relaxed(&q, rng).to_dense();
                sum += &predict_fixed(gcn, features, &a)?.probs;
            }
        }
        Mode::Discrete => {
            let q = posterior.to_bernoulli(mode)?;
            for _ in 0..samples {
                let a = sample_discrete(&q, rng).to_dense();
                sum += &predict_fixed(gcn, features, &a)?.probs;
            }
        }
    }
    sum /= samples as f64;
    Ok(PredictiveResult::from_probs(sum, samples))
}

/// `(node, true class)` for every masked node.
fn masked<'a>(
    result: &'a PredictiveResult,
    labels: &'a [Option<usize>],
    mask: &'a [bool],
) -> Result<Vec<(usize, usize)>> {
    let n = result.predicted_class.len();
    if labels.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} predictions, {} labels, mask of length {}",
            labels.len(),
            mask.len()
        )));
    }
    let mut out = Vec::new();
    for i in (0..n).filter(|&i| mask[i]) {
        let y = labels[i].ok_or_else(|| {
            Error::InconsistentDimensions(format!("node {i} is masked but has no label"))
        })?;
        if y >= result.probs.ncols() {
            return Err(Error::InconsistentDimensions(format!(
                "label {y} of node {i} exceeds {} classes",
                result.probs.ncols()
            )));
        }
        out.push((i, y));
    }
    if out.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(out)
}

/// Fraction of masked nodes whose predicted class equals the label.
pub fn accuracy(result: &PredictiveResult, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let nodes = masked(result, labels, mask)?;
    let hits = nodes
        .iter()
        .filter(|&&(i, y)| result.predicted_class[i] == y)
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Mean log-probability of the true class over the mask, probabilities
/// clamped at `1e-12`.
pub fn mean_log_likelihood(result: &PredictiveResult, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let nodes = masked(result, labels, mask)?;
    let total: f64 = nodes
        .iter()
        .map(|&(i, y)| result.probs[[i, y]].max(1e-12).ln())
        .sum();
    Ok(total / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SymmetricBinaryAdjacency;
    use crate::variational::build_prior;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn result(probs: Mat) -> PredictiveResult {
        PredictiveResult::from_probs(probs, 1)
    }

    #[test]
    fn accuracy_counts() {
        let r = result(array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]);
        let labels = [Some(0), Some(1), Some(0), Some(1)];
        assert_eq!(accuracy(&r, &labels, &[true; 4]).unwrap(), 1.0);
        let wrong = [Some(0), Some(1), Some(0), Some(0)];
        assert_eq!(accuracy(&r, &wrong, &[true; 4]).unwrap(), 0.75);
        let acc = accuracy(&r, &wrong, &[true; 4]).unwrap();
        assert_eq!(acc + 1.0 / 4.0, 1.0);
    }

    #[test]
    fn ties_go_to_first_class() {
        let r = result(Mat::from_elem((3, 3), 1.0 / 3.0));
        assert_eq!(r.predicted_class, vec![0, 0, 0]);
        assert_eq!(accuracy(&r, &[Some(0); 3], &[true; 3]).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let r = result(array![[1.0, 0.0]]);
        assert!(matches!(accuracy(&r, &[Some(0)], &[false]), Err(Error::EmptyMask)));
        assert!(matches!(mean_log_likelihood(&r, &[Some(0)], &[false]), Err(Error::EmptyMask)));
    }

    #[test]
    fn mll_values() {
        let r = result(array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mean_log_likelihood(&r, &[Some(0), Some(1)], &[true, true]).unwrap(), 0.0);
        let uniform = result(Mat::from_elem((2, 7), 1.0 / 7.0));
        let mll = mean_log_likelihood(&uniform, &[Some(3), Some(6)], &[true, true]).unwrap();
        assert!((mll + 7f64.ln()).abs() < 1e-12);
        assert!((mll + 1.9459).abs() < 1e-4);
        let half = result(array![[0.5, 0.5]]);
        assert!((mean_log_likelihood(&half, &[Some(1)], &[true]).unwrap() + 2f64.ln()).abs() < 1e-15);
        let zero = result(array![[1.0, 0.0]]);
        assert!((mean_log_likelihood(&zero, &[Some(1)], &[true]).unwrap() - 1e-12f64.ln()).abs() < 1e-9);
    }

    fn toy() -> (GcnParams, Mat, PosteriorParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) % 3) as f64);
        let g = SymmetricBinaryAdjacency::from_pairs(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        let prior = build_prior(&g, 0.7, 0.2).unwrap();
        (GcnParams::init(3, 4, 3, &mut rng), x, PosteriorParams::free_from(&prior))
    }

    #[test]
    fn averages_single_sample_results() {
        let (gcn, x, phi) = toy();
        for mode in [Mode::Relaxed, Mode::Discrete] {
            let full = posterior_predictive(&gcn, &phi, mode, &x, 5, 0.5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut mean = Mat::zeros(full.probs.raw_dim());
            for _ in 0..5 {
                mean += &posterior_predictive(&gcn, &phi, mode, &x, 1, 0.5, &mut rng).unwrap().probs;
            }
            mean /= 5.0;
            for (a, b) in full.probs.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            for row in full.probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            assert_eq!(full.n_samples_used, 5);
        }
    }

    #[test]
    fn point_mass_posterior_is_sample_free() {
        let (gcn, x, _) = toy();
        // Logits of +-40 saturate the discrete sampler after clamping.
        let logits = Mat::from_shape_fn((10, 1), |(k, _)| if k % 3 == 0 { 40.0 } else { -40.0 });
        let phi = PosteriorParams::Free { logits };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = posterior_predictive(&gcn, &phi, Mode::Discrete, &x, 1, 0.5, &mut rng).unwrap();
        let many = posterior_predictive(&gcn, &phi, Mode::Discrete, &x, 7, 0.5, &mut rng).unwrap();
        for (a, b) in one.probs.iter().zip(many.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let r = result(array![[0.25, 0.75]]);
        assert_eq!(r.to_csv(), "node_id,predicted_class,p0,p1\n0,1,0.25,0.75\n");
    }
}
