//! Variational graph convolutional networks.
//!
//! A two-layer GCN is trained jointly with a factorized variational
//! posterior over the (symmetric, binary) adjacency matrix. The prior over
//! the adjacency is a smoothed copy of an observed graph, which may be a
//! KNN graph built from the features or an adversarially perturbed graph.
//!
//! Modules:
//! - [`graph`]: data model, dataset files, KNN graphs, perturbations.
//! - [`nn`]: reverse-mode tape, the GCN, Adam, checkpoints.
//! - [`variational`]: edge distributions, samplers, KL and ELBO estimators.
//! - [`train`]: VGCN and baseline training loops, grid search.
//! - [`predict`]: posterior predictive, metrics, posterior shift analysis.
//! - [`cli`]: the `vgcn` command-line tool.

pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod nn;
pub mod predict;
pub mod train;
pub mod variational;

pub use error::{Error, Result};
