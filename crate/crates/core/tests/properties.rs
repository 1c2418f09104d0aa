use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vgcn::graph::{
    build_knn_graph, n_pairs, normalize_adjacency, perturb_graph, Metric, PerturbationMode, PerturbationSpec,
    SymmetricBinaryAdjacency,
};
use vgcn::nn::{GcnParams, Mat};
use vgcn::predict::posterior_predictive;
use vgcn::variational::{Mode, PosteriorParams};

fn graph_strategy() -> impl Strategy<Value = SymmetricBinaryAdjacency> {
    (4usize..12).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n_pairs(n)).prop_map(move |bits| {
            let pairs = vgcn::graph::pairs(n).zip(bits).filter(|(_, b)| *b).map(|(p, _)| p);
            SymmetricBinaryAdjacency::from_pairs(n, pairs).unwrap()
        })
    })
}

fn edge_set(g: &SymmetricBinaryAdjacency) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbation_is_reversible(g in graph_strategy(), add_frac in 0.0f64..1.0, rm_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let free = n_pairs(g.n_nodes()) - g.n_edges();
        let spec = PerturbationSpec {
            n_add: (add_frac * free as f64) as usize,
            n_remove: (rm_frac * g.n_edges() as f64) as usize,
            seed,
            mode: PerturbationMode::UniformRandom,
        };
        let p = perturb_graph(&g, &spec).unwrap();
        prop_assert_eq!(p.n_edges(), g.n_edges() + spec.n_add - spec.n_remove);
        let (before, after) = (edge_set(&g), edge_set(&p));
        let added: Vec<_> = after.difference(&before).copied().collect();
        let removed: Vec<_> = before.difference(&after).copied().collect();
        prop_assert_eq!(added.len(), spec.n_add);
        prop_assert_eq!(removed.len(), spec.n_remove);
        let mut back = p.clone();
        for (u, v) in added {
            back.remove(u, v);
        }
        for (u, v) in removed {
            back.insert(u, v).unwrap();
        }
        prop_assert_eq!(back, g.clone());
        prop_assert_eq!(perturb_graph(&g, &spec).unwrap(), p);
    }

    #[test]
    fn degree_preserving_swaps_keep_degrees(g in graph_strategy(), swaps in 0usize..4, seed in any::<u64>()) {
        let spec = PerturbationSpec { n_add: swaps, n_remove: 0, seed, mode: PerturbationMode::DegreePreserving };
        if let Ok(p) = perturb_graph(&g, &spec) {
            prop_assert_eq!(p.degrees(), g.degrees());
        }
    }

    #[test]
    fn knn_graph_is_simple_and_covers_k(rows in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 4..15), k in 1usize..3) {
        let n = rows.len();
        let x = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
        for metric in [Metric::Cosine, Metric::Minkowski] {
            let g = build_knn_graph(&x, k, metric).unwrap();
            prop_assert!(g.degrees().iter().all(|&d| d >= k));
            prop_assert!(g.edges().all(|(u, v)| u < v));
            prop_assert!(g.n_edges() <= n * k);
        }
    }

    #[test]
    fn normalized_adjacency_maps_sqrt_degree_to_itself(g in graph_strategy()) {
        let a = normalize_adjacency(&g.to_dense()).unwrap();
        // sqrt(d) is the eigenvector of D^-1/2 (A + I) D^-1/2 with eigenvalue 1.
        let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
        for i in 0..g.n_nodes() {
            let s: f64 = (0..g.n_nodes()).map(|j| a[[i, j]] * deg[j].sqrt()).sum();
            prop_assert!((s - deg[i].sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_rows_are_distributions(logits in prop::collection::vec(-3.0f64..3.0, n_pairs(6)), samples in 1usize..5, seed in any::<u64>(), discrete in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = GcnParams::init(3, 4, 2, &mut rng);
        let x = Mat::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) % 5) as f64 / 5.0);
        let post = PosteriorParams::Free { logits: Mat::from_shape_vec((logits.len(), 1), logits).unwrap() };
        let mode = if discrete { Mode::Discrete } else { Mode::Relaxed };
        let r = posterior_predictive(&gcn, &post, mode, &x, samples, 0.5, &mut rng).unwrap();
        prop_assert_eq!(r.n_samples_used, samples);
        for row in r.probs.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
