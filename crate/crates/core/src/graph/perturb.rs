use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{n_pairs, SymmetricBinaryAdjacency};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// Remove then add uniformly chosen pairs.
    #[default]
    UniformRandom,
    /// `n_add` double-edge swaps; `n_remove` is ignored.
    DegreePreserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub n_add: usize,
    pub n_remove: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: PerturbationMode,
}

/// Randomly edits the edge set of `graph`.
///
/// In uniform mode, `n_remove` existing edges are deleted and `n_add` pairs
/// that were non-edges of the input are inserted, both without replacement.
/// The result depends only on the input and `spec.seed`.
pub fn perturb_graph(
    graph: &SymmetricBinaryAdjacency,
    spec: &PerturbationSpec,
) -> Result<SymmetricBinaryAdjacency> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        PerturbationMode::UniformRandom => uniform(graph, spec, &mut rng),
        PerturbationMode::DegreePreserving => swaps(graph, spec.n_add, &mut rng),
    }
}

fn uniform(
    graph: &SymmetricBinaryAdjacency,
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SymmetricBinaryAdjacency> {
    let n = graph.n_nodes();
    let n_edges = graph.n_edges();
    let n_non_edges = n_pairs(n) - n_edges;
    if spec.n_remove > n_edges {
        return Err(Error::InfeasibleSpec(format!(
            "cannot remove {} edges from a graph with {}",
            spec.n_remove, n_edges
        )));
    }
    if spec.n_add > n_non_edges {
        return Err(Error::InfeasibleSpec(format!(
            "cannot add {} edges: only {} non-edges exist",
            spec.n_add, n_non_edges
        )));
    }

    let edges: Vec<(usize, usize)> = graph.edges().collect();
    let mut out = graph.clone();
    for k in index::sample(rng, n_edges, spec.n_remove).into_vec() {
        let (u, v) = edges[k];
        out.remove(u, v);
    }

    if spec.n_add == 0 {
        return Ok(out);
    }
    if 2 * spec.n_add <= n_non_edges {
        // Rejection sampling stays cheap while at least half the candidates are free.
        let mut chosen = HashSet::with_capacity(spec.n_add);
        let mut added = Vec::with_capacity(spec.n_add);
        while added.len() < spec.n_add {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if graph.contains(key.0, key.1) || !chosen.insert(key) {
                continue;
            }
            added.push(key);
        }
        for (u, v) in added {
            out.insert(u, v)?;
        }
    } else {
        let candidates: Vec<(usize, usize)> = super::pairs(n)
            .filter(|&(i, j)| !graph.contains(i, j))
            .collect();
        for k in index::sample(rng, candidates.len(), spec.n_add).into_vec() {
            let (u, v) = candidates[k];
            out.insert(u, v)?;
        }
    }
    Ok(out)
}

fn swaps(
    graph: &SymmetricBinaryAdjacency,
    n_swaps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SymmetricBinaryAdjacency> {
    if n_swaps == 0 {
        return Ok(graph.clone());
    }
    if graph.n_edges() < 2 {
        return Err(Error::InfeasibleSpec(format!(
            "degree-preserving swaps need at least 2 edges, graph has {}",
            graph.n_edges()
        )));
    }
    let mut out = graph.clone();
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    let max_tries = 1000 + 100 * n_swaps;
    let mut done = 0;
    let mut tries = 0;
    while done < n_swaps {
        tries += 1;
        if tries > max_tries {
            return Err(Error::InfeasibleSpec(format!(
                "found only {done} of {n_swaps} valid double-edge swaps after {max_tries} attempts"
            )));
        }
        let e1 = rng.gen_range(0..edges.len());
        let e2 = rng.gen_range(0..edges.len());
        if e1 == e2 {
            continue;
        }
        let (a, b) = edges[e1];
        let (mut c, mut d) = edges[e2];
        if rng.gen::<bool>() {
            std::mem::swap(&mut c, &mut d);
        }
        // (a,b),(c,d) -> (a,d),(c,b)
        if a == d || c == b || a == c || b == d {
            continue;
        }
        if out.contains(a, d) || out.contains(c, b) {
            continue;
        }
        out.remove(a, b);
        out.remove(c, d);
        out.insert(a, d)?;
        out.insert(c, b)?;
        edges[e1] = (a.min(d), a.max(d));
        edges[e2] = (c.min(b), c.max(b));
        done += 1;
    }
    Ok(out)
}
