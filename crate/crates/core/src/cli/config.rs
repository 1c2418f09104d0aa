use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_knn_graph, load_nodes, perturb_graph, read_edges, LabeledGraph, Metric,
    PerturbationSpec,
};
use crate::train::{ModelKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub features: PathBuf,
    /// Observed graph; not needed for the no-graph scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

/// Where the prior's observed graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Scenario {
    /// The dataset's edges file.
    #[default]
    GivenGraph,
    /// A KNN graph built from the features.
    NoGraph { k: usize, metric: Metric },
    /// The dataset's edges, perturbed on the fly or replaced by a
    /// previously perturbed edges file.
    Perturbed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbation: Option<PerturbationSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbed_edges: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let d = &mut self.dataset;
        d.features = resolve(base, &d.features);
        d.labels = resolve(base, &d.labels);
        d.splits = resolve(base, &d.splits);
        if let Some(e) = &mut d.edges {
            *e = resolve(base, e);
        }
        if let Scenario::Perturbed {
            perturbed_edges: Some(p),
            ..
        } = &mut self.scenario
        {
            *p = resolve(base, p);
        }
        if let Some(o) = &mut self.out {
            *o = resolve(base, o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let needs_edges = !matches!(self.scenario, Scenario::NoGraph { .. });
        if needs_edges && self.dataset.edges.is_none() {
            return Err(Error::InvalidConfig("this scenario needs dataset.edges".into()));
        }
        if let Scenario::Perturbed {
            perturbation,
            perturbed_edges,
        } = &self.scenario
        {
            if perturbation.is_some() == perturbed_edges.is_some() {
                return Err(Error::InvalidConfig(
                    "perturbed scenario needs exactly one of perturbation, perturbed_edges".into(),
                ));
            }
        }
        Ok(())
    }

    /// Input files read by [`ExperimentConfig::load_graph`].
    pub fn input_files(&self) -> Vec<PathBuf> {
        let d = &self.dataset;
        let mut out = vec![d.features.clone()];
        if !matches!(self.scenario, Scenario::NoGraph { .. }) {
            out.extend(d.edges.clone());
        }
        out.push(d.labels.clone());
        out.push(d.splits.clone());
        if let Scenario::Perturbed {
            perturbed_edges: Some(p),
            ..
        } = &self.scenario
        {
            out.push(p.clone());
        }
        out
    }

    /// Dataset whose adjacency is the scenario's observed graph.
    pub fn load_graph(&self) -> Result<LabeledGraph> {
        self.validate()?;
        let d = &self.dataset;
        let nodes = load_nodes(&d.features, &d.labels, &d.splits)?;
        let n = nodes.n_nodes();
        let edges = || read_edges(d.edges.as_ref().expect("validated"), n);
        let adjacency = match &self.scenario {
            Scenario::GivenGraph => edges()?,
            Scenario::NoGraph { k, metric } => build_knn_graph(&nodes.features, *k, *metric)?,
            Scenario::Perturbed {
                perturbation: Some(spec),
                ..
            } => perturb_graph(&edges()?, spec)?,
            Scenario::Perturbed {
                perturbed_edges: Some(p),
                ..
            } => read_edges(p, n)?,
            Scenario::Perturbed { .. } => unreachable!("validated"),
        };
        nodes.with_adjacency(adjacency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a command, written before it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    /// Seconds since the Unix epoch when the command started.
    pub started_unix: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value, inputs: &[PathBuf]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.clone(),
                    sha256: crate::io::sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs,
            started_unix,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join("manifest.json"), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scenarios() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"features": "f", "labels": "l", "splits": "s"},
                "scenario": {"kind": "no-graph", "k": 10, "metric": "cosine"},
                "model": "gcn", "train": {"max_epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.scenario, Scenario::NoGraph { k: 10, metric: Metric::Cosine });
        assert_eq!(c.model, ModelKind::Gcn);
        assert_eq!(c.train.max_epochs, 3);
        c.validate().unwrap();

        let p: Scenario = serde_json::from_str(
            r#"{"kind": "perturbed", "perturbation": {"n_add": 5, "n_remove": 2, "seed": 1}}"#,
        )
        .unwrap();
        assert!(matches!(p, Scenario::Perturbed { perturbation: Some(_), perturbed_edges: None }));
    }

    #[test]
    fn validation() {
        let mut c: ExperimentConfig =
            serde_json::from_str(r#"{"dataset": {"features": "f", "labels": "l", "splits": "s"}}"#).unwrap();
        assert!(c.validate().is_err());
        c.dataset.edges = Some("e".into());
        c.validate().unwrap();
        c.scenario = Scenario::Perturbed {
            perturbation: None,
            perturbed_edges: None,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let mut c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"features": "f", "edges": "/abs/e", "labels": "l", "splits": "s"}, "out": "o"}"#,
        )
        .unwrap();
        c.rebase(Path::new("/data"));
        assert_eq!(c.dataset.features, PathBuf::from("/data/f"));
        assert_eq!(c.dataset.edges, Some(PathBuf::from("/abs/e")));
        assert_eq!(c.out, Some(PathBuf::from("/data/o")));
    }
}
