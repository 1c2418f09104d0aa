use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::SymmetricBinaryAdjacency;
use crate::error::{Error, Result};

/// Distance used to rank neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `1 - cos(x_i, x_j)`.
    Cosine,
    /// Minkowski distance with `p = 2`.
    Minkowski,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "minkowski" | "euclidean" => Ok(Metric::Minkowski),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Minkowski => "minkowski",
        })
    }
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// K-nearest-neighbour graph, symmetrized by union.
///
/// Each node links to its `k` closest other nodes; equal distances go to
/// the smaller node index.
pub fn build_knn_graph(
    features: &Array2<f64>,
    k: usize,
    metric: Metric,
) -> Result<SymmetricBinaryAdjacency> {
    let n = features.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n_nodes: n });
    }

    let norms: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect();
    if metric == Metric::Cosine {
        if let Some(node) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector { node });
        }
    }

    let distance = |i: usize, j: usize| -> f64 {
        let (a, b) = (features.row(i), features.row(j));
        match metric {
            Metric::Cosine => 1.0 - a.dot(&b) / (norms[i] * norms[j]),
            Metric::Minkowski => euclidean(a, b),
        }
    };

    let mut graph = SymmetricBinaryAdjacency::empty(n);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i).map(|j| (distance(i, j), j)));
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(k) {
            graph.insert(i, j)?;
        }
    }
    Ok(graph)
}
