#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use vgcn::graph::synthetic::{sbm, SbmConfig};
use vgcn::graph::{save_dataset, DatasetPaths, LabeledGraph};

/// Small labelled SBM written into `dir`.
pub fn write_toy_dataset(dir: &Path, n_nodes: usize, seed: u64) -> (LabeledGraph, DatasetPaths) {
    let graph = sbm(&SbmConfig {
        n_nodes,
        train_per_class: 3,
        val_per_class: 3,
        seed,
        ..SbmConfig::default()
    })
    .unwrap();
    let paths = DatasetPaths::in_dir(dir);
    save_dataset(&graph, &paths).unwrap();
    (graph, paths)
}

/// Experiment config pointing at `paths` with the given training overrides.
pub fn write_config(path: &Path, paths: &DatasetPaths, model: &str, train: Value) -> PathBuf {
    let cfg = json!({
        "dataset": {
            "features": paths.features,
            "edges": paths.edges,
            "labels": paths.labels,
            "splits": paths.splits,
        },
        "model": model,
        "train": train,
    });
    fs::write(path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path.to_path_buf()
}

/// Runs the CLI in-process and returns its exit code.
pub fn vgcn(args: &[&str]) -> i32 {
    let mut argv = vec!["vgcn"];
    argv.extend_from_slice(args);
    vgcn::cli::main_with_args(argv)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` except manifests and wall-clock timings, keyed
/// by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !matches!(p.file_name().unwrap().to_str(), Some("manifest.json" | "timings.csv")) {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
