use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loops::{stream, train_gcn_baseline, train_vgcn};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{row_normalize_features, LabeledGraph};
use crate::predict::{accuracy, posterior_predictive, predict_fixed};

/// RNG stream for test-time prediction.
pub(crate) const TEST_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Vgcn,
    /// Plain GCN on the observed graph.
    Gcn,
}

/// One training run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub config_index: usize,
    pub replication: usize,
    pub seed: u64,
    /// Best validation accuracy; NaN when the run failed.
    pub val_accuracy: f64,
    /// Test accuracy of the selected checkpoint; NaN when the run failed
    /// or there are no test nodes.
    pub test_accuracy: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    /// Mean validation accuracy per config over its successful runs.
    pub mean_val_accuracy: Vec<f64>,
    pub cells: Vec<GridCell>,
}

impl GridOutcome {
    /// `config_index,replication,seed,val_accuracy,test_accuracy,error`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config_index,replication,seed,val_accuracy,test_accuracy,error\n");
        for c in &self.cells {
            let err = c.error.as_deref().unwrap_or("").replace(['\n', ','], " ");
            writeln!(
                out,
                "{},{},{},{},{},{err}",
                c.config_index, c.replication, c.seed, c.val_accuracy, c.test_accuracy
            )
            .unwrap();
        }
        out
    }
}

fn run_cell(config: &TrainConfig, graph: &LabeledGraph, model: ModelKind) -> Result<(f64, f64)> {
    let has_test = graph.masks.test.iter().any(|&m| m);
    let features = row_normalize_features(&graph.features);
    let (history, pred) = match model {
        ModelKind::Vgcn => {
            let fit = train_vgcn(config, graph)?;
            let pred = if has_test {
                let mut rng = stream(config.seed, TEST_STREAM);
                Some(posterior_predictive(
                    &fit.gcn,
                    &fit.posterior,
                    config.mode,
                    &features,
                    config.s_pred,
                    config.tau,
                    &mut rng,
                )?)
            } else {
                None
            };
            (fit.history, pred)
        }
        ModelKind::Gcn => {
            let fit = train_gcn_baseline(config, graph, &graph.adjacency)?;
            let pred = if has_test {
                Some(predict_fixed(&fit.gcn, &features, &graph.adjacency.to_dense())?)
            } else {
                None
            };
            (fit.history, pred)
        }
    };
    let val = history.best_val_acc().unwrap_or(f64::NAN);
    let test = match pred {
        Some(p) => accuracy(&p, &graph.labels, &graph.masks.test)?,
        None => f64::NAN,
    };
    Ok((val, test))
}

/// Trains every config `replications` times (seed `config.seed + r`) and
/// picks the config with the highest mean validation accuracy, the lower
/// index winning ties. Failed runs are recorded with NaN accuracies and
/// left out of the means. Cells run on `jobs` worker threads.
pub fn grid_search(
    grid: &[TrainConfig],
    graph: &LabeledGraph,
    replications: usize,
    model: ModelKind,
    jobs: usize,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be at least 1".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..replications).map(move |r| (c, r)))
        .collect();
    let run = |&(c, r): &(usize, usize)| {
        let seed = grid[c].seed.wrapping_add(r as u64);
        let config = TrainConfig { seed, ..grid[c].clone() };
        let (val_accuracy, test_accuracy, error) = match run_cell(&config, graph, model) {
            Ok((v, t)) => (v, t, None),
            Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
        };
        GridCell {
            config_index: c,
            replication: r,
            seed,
            val_accuracy,
            test_accuracy,
            error,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let cells: Vec<GridCell> = pool.install(|| tasks.par_iter().map(run).collect());

    let mean_val_accuracy: Vec<f64> = (0..grid.len())
        .map(|c| {
            let ok: Vec<f64> = cells
                .iter()
                .filter(|x| x.config_index == c && x.error.is_none() && !x.val_accuracy.is_nan())
                .map(|x| x.val_accuracy)
                .collect();
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            }
        })
        .collect();
    let best_index = mean_val_accuracy
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::AllCellsFailed)?;
    Ok(GridOutcome {
        best_index,
        best_config: grid[best_index].clone(),
        mean_val_accuracy,
        cells,
    })
}

/// The `rho1 x tau_prior x tau x beta` grid (4 x 2 x 3 x 4 = 96 configs)
/// over `base`.
pub fn standard_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for rho1 in [0.25, 0.5, 0.75, 0.99] {
        for tau_prior in [0.1, 0.5] {
            for tau in [0.1, 0.5, 0.66] {
                for beta in [1e-4, 1e-3, 1e-2, 1.0] {
                    out.push(TrainConfig {
                        rho1,
                        tau_prior,
                        tau,
                        beta,
                        ..base.clone()
                    });
                }
            }
        }
    }
    out
}
