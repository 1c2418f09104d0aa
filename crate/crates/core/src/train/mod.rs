//! Training loops for the VGCN and the plain GCN baseline, plus grid search.

mod grid;
mod loops;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variational::{Mode, Objective, Parameterization};

pub use grid::{grid_search, standard_grid, GridCell, GridOutcome, ModelKind};
pub(crate) use grid::TEST_STREAM;
pub(crate) use loops::stream;
pub use loops::{init_posterior, train_gcn_baseline, train_vgcn, GcnFit, VgcnFit};

/// Optimizer, relaxation and regularization settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Adam learning rate.
    pub lr: f64,
    pub max_epochs: usize,
    /// Dropout rate on the input features and the hidden layer.
    pub dropout: f64,
    pub l2_weight: f64,
    /// Apply the L2 penalty to both layers instead of the first only.
    pub l2_both_layers: bool,
    /// Prior edge probability on observed edges.
    pub rho1: f64,
    /// Prior edge probability on unobserved pairs.
    pub rho0: f64,
    /// Posterior temperature.
    pub tau: f64,
    /// Prior temperature.
    pub tau_prior: f64,
    /// KL weight.
    pub beta: f64,
    /// Monte Carlo samples per training step.
    pub s_train: usize,
    /// Monte Carlo samples for prediction.
    pub s_pred: usize,
    pub parameterization: Parameterization,
    pub mode: Mode,
    pub objective: Objective,
    pub seed: u64,
    /// Hidden units of the GCN.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            max_epochs: 5000,
            dropout: 0.5,
            l2_weight: 5e-4,
            l2_both_layers: false,
            rho1: 0.75,
            rho0: 1e-5,
            tau: 0.5,
            tau_prior: 0.1,
            beta: 1e-2,
            s_train: 3,
            s_pred: 16,
            parameterization: Parameterization::Free,
            mode: Mode::Relaxed,
            objective: Objective::Elbo,
            seed: 0,
            hidden: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be a finite non-negative number", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return bad(format!("l2_weight {} must be >= 0", self.l2_weight));
        }
        for (name, v) in [("rho1", self.rho1), ("rho0", self.rho0)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} not in (0, 1)"));
            }
        }
        for (name, v) in [("tau", self.tau), ("tau_prior", self.tau_prior), ("beta", self.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be positive"));
            }
        }
        if self.s_train == 0 || self.s_pred == 0 {
            return bad("s_train and s_pred must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if let Parameterization::Lowrank { dz: 0 } = self.parameterization {
            return bad("lowrank dz must be at least 1".into());
        }
        if self.objective == Objective::IwElbo && self.mode != Mode::Relaxed {
            return bad("iw-elbo requires relaxed mode".into());
        }
        Ok(())
    }
}

/// One completed epoch.
///
/// `elbo`, `train_ll` and `kl` describe the objective estimate computed at
/// the start of the epoch; `val_acc` is measured after the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub train_ll: f64,
    pub kl: f64,
    pub val_acc: f64,
}

/// Per-epoch records plus wall-clock timings, kept apart so that the
/// records of two runs with the same seed compare equal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Seconds spent in each epoch.
    pub seconds: Vec<f64>,
    /// Epoch whose parameters were returned; `None` for the initialization.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Highest recorded validation accuracy, ignoring NaN.
    pub fn best_val_acc(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.val_acc)
            .filter(|v| !v.is_nan())
            .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
    }

    /// `epoch,elbo,train_ll,kl,val_acc`; identical for identical seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,elbo,train_ll,kl,val_acc\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.epoch, r.elbo, r.train_ll, r.kl, r.val_acc).unwrap();
        }
        out
    }

    /// `epoch,seconds`
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for (r, s) in self.records.iter().zip(&self.seconds) {
            writeln!(out, "{},{s}", r.epoch).unwrap();
        }
        out
    }
}
