//! Graph data model: labelled node sets, undirected binary adjacency,
//! dataset I/O, KNN graphs, normalization and edge perturbation.

mod io;
mod knn;
pub(crate) mod normalize;
mod perturb;
pub mod synthetic;

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use io::{load_dataset, load_nodes, read_edges, read_features, save_dataset, write_edges, DatasetPaths};
pub use knn::{build_knn_graph, Metric};
pub use normalize::{normalize_adjacency, row_normalize_features};
pub use perturb::{perturb_graph, PerturbationMode, PerturbationSpec};

/// Number of unordered pairs `i < j` among `n` nodes.
pub fn n_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row-major index of the pair `(i, j)`, `i < j`, in the upper triangle.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Iterates the upper-triangle pairs in the order used by [`pair_index`].
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Mirrors per-pair values into a symmetric `n x n` matrix with zero diagonal.
pub fn mirror_pairs(values: &[f64], n: usize) -> Array2<f64> {
    assert_eq!(values.len(), n_pairs(n), "pair vector length");
    let mut m = Array2::zeros((n, n));
    for ((i, j), &v) in pairs(n).zip(values) {
        m[[i, j]] = v;
        m[[j, i]] = v;
    }
    m
}

/// Undirected simple graph stored as its upper-triangle edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetricBinaryAdjacency {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SymmetricBinaryAdjacency {
    pub fn empty(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            edges: BTreeSet::new(),
        }
    }

    /// Builds a graph from unordered pairs. Reversed duplicates collapse
    /// into one edge; self-pairs are rejected.
    pub fn from_pairs<I>(n_nodes: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(n_nodes);
        for (u, v) in pairs {
            g.insert(u, v)?;
        }
        Ok(g)
    }

    /// Thresholds a dense 0/1 matrix's upper triangle at 0.5.
    pub fn from_dense(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "adjacency must be square, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut g = Self::empty(n);
        for (i, j) in pairs(n) {
            if a[[i, j]] > 0.5 {
                g.edges.insert((i, j));
            }
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edges.contains(&key)
    }

    /// Returns true if the edge was new.
    pub fn insert(&mut self, u: usize, v: usize) -> Result<bool> {
        for idx in [u, v] {
            if idx >= self.n_nodes {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    n_nodes: self.n_nodes,
                });
            }
        }
        if u == v {
            return Err(Error::SelfLoop { node: u });
        }
        Ok(self.edges.insert((u.min(v), u.max(v))))
    }

    pub fn remove(&mut self, u: usize, v: usize) -> bool {
        self.edges.remove(&(u.min(v), u.max(v)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Edge indicator per upper-triangle pair.
    pub fn pair_indicators(&self) -> Vec<bool> {
        let mut out = vec![false; n_pairs(self.n_nodes)];
        for &(i, j) in &self.edges {
            out[pair_index(i, j, self.n_nodes)] = true;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn empty(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    /// Builds masks from node lists.
    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Self {
        let mut m = Self::empty(n);
        for &i in train {
            m.train[i] = true;
        }
        for &i in val {
            m.val[i] = true;
        }
        for &i in test {
            m.test[i] = true;
        }
        m
    }
}

/// Nodes selected by a boolean mask.
pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Features, observed graph, partial labels and the train/val/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub features: Array2<f64>,
    pub adjacency: SymmetricBinaryAdjacency,
    /// `None` marks an unlabelled node.
    pub labels: Vec<Option<usize>>,
    pub n_classes: usize,
    pub masks: SplitMasks,
}

impl LabeledGraph {
    /// Checks every structural invariant and returns the graph.
    pub fn new(
        features: Array2<f64>,
        adjacency: SymmetricBinaryAdjacency,
        labels: Vec<Option<usize>>,
        n_classes: usize,
        masks: SplitMasks,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InconsistentDimensions("graph has no nodes".into()));
        }
        if adjacency.n_nodes() != n {
            return Err(Error::InconsistentDimensions(format!(
                "{} feature rows but adjacency over {} nodes",
                n,
                adjacency.n_nodes()
            )));
        }
        if labels.len() != n {
            return Err(Error::InconsistentDimensions(format!(
                "{} feature rows but {} label rows",
                n,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= n_classes) {
            return Err(Error::InconsistentDimensions(format!(
                "class {bad} out of range for {n_classes} classes"
            )));
        }
        for (name, m) in [("train", &masks.train), ("val", &masks.val), ("test", &masks.test)] {
            if m.len() != n {
                return Err(Error::InconsistentDimensions(format!(
                    "{name} mask has length {} for {n} nodes",
                    m.len()
                )));
            }
        }
        for (i, label) in labels.iter().enumerate() {
            let hits = [masks.train[i], masks.val[i], masks.test[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if hits > 1 {
                return Err(Error::InconsistentDimensions(format!(
                    "node {i} appears in more than one split"
                )));
            }
            if hits == 1 && label.is_none() {
                return Err(Error::InconsistentDimensions(format!(
                    "node {i} is in a split but has no label"
                )));
            }
        }
        Ok(Self {
            features,
            adjacency,
            labels,
            n_classes,
            masks,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// One-hot label matrix; unlabelled rows are zero.
    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.n_nodes(), self.n_classes));
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                y[[i, *c]] = 1.0;
            }
        }
        y
    }

    /// Same graph with a different observed adjacency.
    pub fn with_adjacency(&self, adjacency: SymmetricBinaryAdjacency) -> Result<Self> {
        Self::new(
            self.features.clone(),
            adjacency,
            self.labels.clone(),
            self.n_classes,
            self.masks.clone(),
        )
    }
}
