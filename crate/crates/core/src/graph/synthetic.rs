//! Stochastic-block-model toy datasets for tests and demos.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pairs, LabeledGraph, SplitMasks, SymmetricBinaryAdjacency};
use crate::error::{Error, Result};

/// Block model with bag-of-words style binary features.
///
/// Each block owns `n_features / n_blocks` "topic" features that its nodes
/// switch on with probability `p_topic`; every feature is also switched on
/// with probability `p_background`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_features: usize,
    pub p_topic: f64,
    pub p_background: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n_nodes: 60,
            n_blocks: 2,
            p_in: 0.2,
            p_out: 0.02,
            n_features: 20,
            p_topic: 0.3,
            p_background: 0.1,
            train_per_class: 5,
            val_per_class: 5,
            seed: 0,
        }
    }
}

/// Samples a labelled SBM graph. Nodes are assigned to blocks round-robin;
/// all labelled nodes outside train and val go to test.
pub fn sbm(cfg: &SbmConfig) -> Result<LabeledGraph> {
    if cfg.n_blocks == 0 || cfg.n_nodes < cfg.n_blocks {
        return Err(Error::InvalidConfig("need at least one node per block".into()));
    }
    if cfg.n_nodes < cfg.n_blocks * (cfg.train_per_class + cfg.val_per_class) {
        return Err(Error::InvalidConfig("not enough nodes for the requested splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_nodes;
    let block: Vec<usize> = (0..n).map(|i| i % cfg.n_blocks).collect();

    let mut adjacency = SymmetricBinaryAdjacency::empty(n);
    for (i, j) in pairs(n) {
        let p = if block[i] == block[j] { cfg.p_in } else { cfg.p_out };
        if rng.gen::<f64>() < p {
            adjacency.insert(i, j)?;
        }
    }

    let per_block = (cfg.n_features / cfg.n_blocks).max(1);
    let features = Array2::from_shape_fn((n, cfg.n_features), |(i, f)| {
        let topical = f / per_block == block[i];
        let p = if topical { cfg.p_topic } else { 0.0 };
        let on = rng.gen::<f64>() < p || rng.gen::<f64>() < cfg.p_background;
        if on {
            1.0
        } else {
            0.0
        }
    });

    let mut masks = SplitMasks::empty(n);
    for b in 0..cfg.n_blocks {
        let mut members: Vec<usize> = (0..n).filter(|&i| block[i] == b).collect();
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            if k < cfg.train_per_class {
                masks.train[i] = true;
            } else if k < cfg.train_per_class + cfg.val_per_class {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
    }
    let labels = block.into_iter().map(Some).collect();
    LabeledGraph::new(features, adjacency, labels, cfg.n_blocks, masks)
}
