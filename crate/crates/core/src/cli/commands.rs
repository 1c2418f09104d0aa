use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{DatasetConfig, ExperimentConfig, RunManifest, Scenario};
use super::{AnalyzeArgs, EvaluateArgs, ExperimentArgs, GridArgs, PerturbArgs, PrepareKnnArgs, RemoveCount, TrainArgs};
use crate::error::{Error, Result};
use crate::graph::{
    build_knn_graph, load_nodes, perturb_graph, read_edges, read_features, row_normalize_features,
    write_edges, PerturbationSpec,
};
use crate::io::{write_atomic, write_json};
use crate::nn::{Checkpoint, GcnParams};
use crate::predict::{
    accuracy, mean_log_likelihood, posterior_predictive, posterior_shift, predict_fixed,
    PredictiveResult,
};
use crate::train::{grid_search, standard_grid, stream, train_gcn_baseline, train_vgcn, ModelKind, TrainConfig, TEST_STREAM};
use crate::variational::{build_prior, LowRankPosterior, Mode, PosteriorParams};

const GCN_STEM: &str = "gcn";
const POSTERIOR_STEM: &str = "posterior";
const PRIOR_EDGES: &str = "prior_edges.txt";

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

/// Experiment from `--config` (or `fallback`) with flag overrides applied.
fn experiment(args: &ExperimentArgs, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let path = args.config.as_deref().or(fallback);
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let missing = |flag: &str| Error::InvalidConfig(format!("--{flag} is required without --config"));
            ExperimentConfig {
                dataset: DatasetConfig {
                    features: args.features.clone().ok_or_else(|| missing("features"))?,
                    edges: args.edges.clone(),
                    labels: args.labels.clone().ok_or_else(|| missing("labels"))?,
                    splits: args.splits.clone().ok_or_else(|| missing("splits"))?,
                },
                scenario: Scenario::GivenGraph,
                model: ModelKind::Vgcn,
                train: TrainConfig::default(),
                out: None,
            }
        }
    };
    let d = &mut cfg.dataset;
    if let Some(p) = &args.features {
        d.features = p.clone();
    }
    if let Some(p) = &args.edges {
        d.edges = Some(p.clone());
    }
    if let Some(p) = &args.labels {
        d.labels = p.clone();
    }
    if let Some(p) = &args.splits {
        d.splits = p.clone();
    }
    d.features = absolute(&d.features)?;
    d.labels = absolute(&d.labels)?;
    d.splits = absolute(&d.splits)?;
    if let Some(e) = &d.edges {
        d.edges = Some(absolute(e)?);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(o) = &cfg.out {
        cfg.out = Some(absolute(o)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set \"out\"".into()))
}

pub(super) fn prepare_knn(a: &PrepareKnnArgs) -> Result<Value> {
    create_dir(&a.out)?;
    let config = json!({"features": a.features, "k": a.k, "metric": a.metric});
    RunManifest::new("prepare-knn", None, config, std::slice::from_ref(&a.features))?.write(&a.out)?;
    let x = read_features(&a.features)?;
    let g = build_knn_graph(&x, a.k, a.metric)?;
    write_edges(&a.out.join("edges.txt"), &g)?;
    let sidecar = json!({"k": a.k, "metric": a.metric, "n_nodes": g.n_nodes(), "n_edges": g.n_edges()});
    write_json(&a.out.join("knn.json"), &sidecar)?;
    Ok(json!({"status": "ok", "out": a.out, "n_edges": g.n_edges()}))
}

pub(super) fn perturb(a: &PerturbArgs) -> Result<Value> {
    create_dir(&a.out)?;
    let remove = match a.remove {
        RemoveCount::All => json!("all"),
        RemoveCount::Count(c) => json!(c),
    };
    let config = json!({
        "features": a.features, "edges": a.edges, "add": a.add, "remove": remove,
        "seed": a.seed, "mode": crate::graph::PerturbationMode::from(a.mode),
    });
    RunManifest::new("perturb", Some(a.seed), config, &[a.features.clone(), a.edges.clone()])?.write(&a.out)?;
    let n = read_features(&a.features)?.nrows();
    let g = read_edges(&a.edges, n)?;
    let spec = PerturbationSpec {
        n_add: a.add,
        n_remove: match a.remove {
            RemoveCount::All => g.n_edges(),
            RemoveCount::Count(c) => c,
        },
        seed: a.seed,
        mode: a.mode.into(),
    };
    let p = perturb_graph(&g, &spec)?;
    write_edges(&a.out.join("edges.txt"), &p)?;
    let record = json!({
        "n_add": spec.n_add, "n_remove": spec.n_remove, "seed": spec.seed, "mode": spec.mode,
        "n_nodes": n, "n_edges_before": g.n_edges(), "n_edges_after": p.n_edges(),
    });
    write_json(&a.out.join("perturbation.json"), &record)?;
    Ok(json!({"status": "ok", "out": a.out, "n_edges": p.n_edges()}))
}

fn gcn_checkpoint(gcn: &GcnParams, model: ModelKind, n_nodes: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(json!({
        "model": model,
        "n_nodes": n_nodes,
        "n_features": gcn.n_features(),
        "hidden": gcn.hidden(),
        "n_classes": gcn.n_classes(),
    }));
    ck.push("w0", gcn.w0.clone()).push("w1", gcn.w1.clone());
    ck
}

fn posterior_checkpoint(p: &PosteriorParams, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(json!({
        "parameterization": cfg.parameterization,
        "mode": cfg.mode,
        "tau": cfg.tau,
        "tau_prior": cfg.tau_prior,
        "beta": cfg.beta,
        "rho1": cfg.rho1,
        "rho0": cfg.rho0,
        "n_nodes": p.n_nodes(),
    }));
    for (name, t) in p.tensors() {
        ck.push(name, t.clone());
    }
    ck
}

fn posterior_from_checkpoint(ck: &Checkpoint) -> Result<PosteriorParams> {
    let mismatch = |m: String| Err(Error::CheckpointMismatch(m));
    if let Ok(logits) = ck.get("logits") {
        if logits.ncols() != 1 {
            return mismatch(format!("logits have {} columns", logits.ncols()));
        }
        return Ok(PosteriorParams::Free { logits: logits.clone() });
    }
    let lr = LowRankPosterior {
        z: ck.get("z")?.clone(),
        z_tilde: ck.get("z_tilde")?.clone(),
        b: ck.get("b")?.clone(),
        s: ck.get("s")?.clone(),
    };
    let n = lr.z.nrows();
    if lr.z_tilde.dim() != lr.z.dim() || lr.b.dim() != (n, 1) || lr.s.dim() != (1, 1) {
        return mismatch("inconsistent low-rank tensor shapes".into());
    }
    Ok(PosteriorParams::LowRank(lr))
}

fn meta<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a Value> {
    ck.metadata
        .get(key)
        .ok_or_else(|| Error::CheckpointMismatch(format!("metadata lacks {key:?}")))
}

fn meta_f64(ck: &Checkpoint, key: &str) -> Result<f64> {
    meta(ck, key)?
        .as_f64()
        .ok_or_else(|| Error::CheckpointMismatch(format!("metadata {key:?} is not a number")))
}

fn meta_parse<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_value(meta(ck, key)?.clone())
        .map_err(|e| Error::CheckpointMismatch(format!("metadata {key:?}: {e}")))
}

fn load_gcn(dir: &Path) -> Result<(GcnParams, ModelKind, Checkpoint)> {
    let ck = Checkpoint::load(&dir.join(GCN_STEM))?;
    let gcn = GcnParams {
        w0: ck.get("w0")?.clone(),
        w1: ck.get("w1")?.clone(),
    };
    if gcn.w0.ncols() != gcn.w1.nrows() {
        return Err(Error::CheckpointMismatch(format!(
            "w0 is {:?} but w1 is {:?}",
            gcn.w0.dim(),
            gcn.w1.dim()
        )));
    }
    let model = meta_parse(&ck, "model")?;
    Ok((gcn, model, ck))
}

fn checkpoint_files(dir: &Path, stems: &[&str]) -> Vec<PathBuf> {
    stems
        .iter()
        .flat_map(|s| [dir.join(format!("{s}.json")), dir.join(format!("{s}.bin"))])
        .collect()
}

pub(super) fn train(a: &TrainArgs) -> Result<Value> {
    let cfg = experiment(&a.experiment, None)?;
    let out = required_out(&cfg)?;
    create_dir(&out)?;
    RunManifest::new("train", Some(cfg.train.seed), to_value(&cfg), &cfg.input_files())?.write(&out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let graph = cfg.load_graph()?;
    write_edges(&out.join(PRIOR_EDGES), &graph.adjacency)?;
    let history = match cfg.model {
        ModelKind::Vgcn => {
            let fit = train_vgcn(&cfg.train, &graph)?;
            gcn_checkpoint(&fit.gcn, cfg.model, graph.n_nodes()).save(&out.join(GCN_STEM))?;
            posterior_checkpoint(&fit.posterior, &cfg.train).save(&out.join(POSTERIOR_STEM))?;
            fit.history
        }
        ModelKind::Gcn => {
            let fit = train_gcn_baseline(&cfg.train, &graph, &graph.adjacency)?;
            gcn_checkpoint(&fit.gcn, cfg.model, graph.n_nodes()).save(&out.join(GCN_STEM))?;
            fit.history
        }
    };
    write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
    write_atomic(&out.join("timings.csv"), history.timings_csv().as_bytes())?;
    Ok(json!({
        "status": "ok",
        "out": out,
        "epochs": history.len(),
        "best_epoch": history.best_epoch,
        "best_val_accuracy": history.best_val_acc(),
    }))
}

type Metric = fn(&PredictiveResult, &[Option<usize>], &[bool]) -> Result<f64>;

fn optional_metric(
    result: &PredictiveResult,
    labels: &[Option<usize>],
    mask: &[bool],
    f: Metric,
) -> Result<Option<f64>> {
    match f(result, labels, mask) {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyMask) => Ok(None),
        Err(e) => Err(e),
    }
}

pub(super) fn evaluate(a: &EvaluateArgs) -> Result<Value> {
    let fallback = a.checkpoint.join("config.json");
    let cfg = experiment(&a.experiment, Some(&fallback))?;
    let out = match &a.experiment.out {
        Some(o) => o.clone(),
        None => a.checkpoint.join("evaluation"),
    };
    create_dir(&out)?;
    let (gcn, model, gcn_ck) = load_gcn(&a.checkpoint)?;
    let mut inputs = checkpoint_files(&a.checkpoint, &[GCN_STEM]);
    if model == ModelKind::Vgcn {
        inputs.extend(checkpoint_files(&a.checkpoint, &[POSTERIOR_STEM]));
    } else {
        inputs.push(a.checkpoint.join(PRIOR_EDGES));
    }
    let d = &cfg.dataset;
    inputs.extend([d.features.clone(), d.labels.clone(), d.splits.clone()]);
    let seed = cfg.train.seed;
    RunManifest::new("evaluate", Some(seed), json!({"checkpoint": a.checkpoint, "experiment": to_value(&cfg)}), &inputs)?
        .write(&out)?;

    let graph = load_nodes(&d.features, &d.labels, &d.splits)?;
    if gcn.n_features() != graph.n_features() || gcn.n_classes() != graph.n_classes {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint maps {} features to {} classes, dataset has {} features and {} classes",
            gcn.n_features(),
            gcn.n_classes(),
            graph.n_features(),
            graph.n_classes
        )));
    }
    let n = graph.n_nodes();
    if meta(&gcn_ck, "n_nodes")?.as_u64() != Some(n as u64) {
        return Err(Error::CheckpointMismatch(format!("checkpoint was trained on a different node count than {n}")));
    }
    let features = row_normalize_features(&graph.features);
    let mut metrics = json!({"model": model, "seed": seed});
    let result = match model {
        ModelKind::Vgcn => {
            let ck = Checkpoint::load(&a.checkpoint.join(POSTERIOR_STEM))?;
            let posterior = posterior_from_checkpoint(&ck)?;
            if posterior.n_nodes() != n {
                return Err(Error::CheckpointMismatch(format!(
                    "posterior over {} nodes, dataset has {n}",
                    posterior.n_nodes()
                )));
            }
            let mode: Mode = meta_parse(&ck, "mode")?;
            let tau = meta_f64(&ck, "tau")?;
            let s_pred = cfg.train.s_pred;
            let mut rng = stream(seed, TEST_STREAM);
            let r = posterior_predictive(&gcn, &posterior, mode, &features, s_pred, tau, &mut rng)?;
            metrics["s_pred"] = json!(s_pred);
            metrics["n_samples_used"] = json!(r.n_samples_used);
            r
        }
        ModelKind::Gcn => {
            let adjacency = read_edges(&a.checkpoint.join(PRIOR_EDGES), n)?;
            predict_fixed(&gcn, &features, &adjacency.to_dense())?
        }
    };
    let m = &graph.masks;
    metrics["val_accuracy"] = json!(optional_metric(&result, &graph.labels, &m.val, accuracy)?);
    metrics["test_accuracy"] = json!(optional_metric(&result, &graph.labels, &m.test, accuracy)?);
    metrics["val_mll"] = json!(optional_metric(&result, &graph.labels, &m.val, mean_log_likelihood)?);
    metrics["test_mll"] = json!(optional_metric(&result, &graph.labels, &m.test, mean_log_likelihood)?);
    write_json(&out.join("metrics.json"), &metrics)?;
    write_atomic(&out.join("predictions.csv"), result.to_csv().as_bytes())?;
    Ok(json!({"status": "ok", "out": out, "metrics": metrics}))
}

/// Overlays each object of `overrides` on `base`.
fn expand_grid(base: &TrainConfig, overrides: &Value) -> Result<Vec<TrainConfig>> {
    let cells = overrides
        .as_array()
        .ok_or_else(|| Error::InvalidConfig("grid file must hold a JSON array".into()))?;
    cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let obj = cell
                .as_object()
                .ok_or_else(|| Error::InvalidConfig(format!("grid cell {i} is not an object")))?;
            let mut merged = to_value(base);
            for (k, v) in obj {
                merged[k] = v.clone();
            }
            serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(format!("grid cell {i}: {e}")))
        })
        .collect()
}

pub(super) fn grid(a: &GridArgs) -> Result<Value> {
    let cfg = experiment(&a.experiment, None)?;
    let out = required_out(&cfg)?;
    create_dir(&out)?;
    let mut inputs = cfg.input_files();
    let configs = match &a.grid {
        Some(path) => {
            inputs.push(path.clone());
            let overrides: Value = crate::io::read_json(path)?;
            expand_grid(&cfg.train, &overrides)?
        }
        None => standard_grid(&cfg.train),
    };
    let config = json!({
        "experiment": to_value(&cfg), "grid": a.grid, "standard_grid": a.standard_grid,
        "replications": a.replications, "jobs": a.jobs,
    });
    RunManifest::new("grid", Some(cfg.train.seed), config, &inputs)?.write(&out)?;
    write_json(&out.join("configs.json"), &configs)?;

    let graph = cfg.load_graph()?;
    let outcome = grid_search(&configs, &graph, a.replications, cfg.model, a.jobs)?;
    write_atomic(&out.join("results.csv"), outcome.to_csv().as_bytes())?;
    let best = json!({
        "config_index": outcome.best_index,
        "mean_val_accuracy": outcome.mean_val_accuracy[outcome.best_index],
        "config": outcome.best_config,
        "mean_val_accuracy_per_config": outcome.mean_val_accuracy,
    });
    write_json(&out.join("best_config.json"), &best)?;
    Ok(json!({
        "status": "ok",
        "out": out,
        "cells": outcome.cells.len(),
        "best_index": outcome.best_index,
    }))
}

pub(super) fn analyze_posterior(a: &AnalyzeArgs) -> Result<Value> {
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.join("posterior-analysis"),
    };
    create_dir(&out)?;
    let mut inputs = checkpoint_files(&a.checkpoint, &[POSTERIOR_STEM]);
    inputs.push(a.checkpoint.join(PRIOR_EDGES));
    RunManifest::new("analyze-posterior", None, json!({"checkpoint": a.checkpoint, "threshold": a.threshold}), &inputs)?
        .write(&out)?;

    let ck = Checkpoint::load(&a.checkpoint.join(POSTERIOR_STEM))?;
    let posterior = posterior_from_checkpoint(&ck)?;
    let n = posterior.n_nodes();
    let observed = read_edges(&a.checkpoint.join(PRIOR_EDGES), n)?;
    let prior = build_prior(&observed, meta_f64(&ck, "rho1")?, meta_f64(&ck, "rho0")?)?;
    let mode: Mode = meta_parse(&ck, "mode")?;
    // Discrete posteriors report rho itself, which is what sigmoid(logit) gives back.
    let q = posterior.to_concrete(mode, meta_f64(&ck, "tau")?)?;
    let report = posterior_shift(&prior, &q, a.threshold)?;
    write_json(&out.join("posterior_shift.json"), &report)?;
    Ok(json!({
        "status": "ok",
        "out": out,
        "threshold": report.threshold,
        "n_significant": report.n_significant,
    }))
}
