//! Acceptance suite. Runs every criterion, prints one `PASS`/`FAIL` line
//! each, and exits non-zero if any failed. A plain argument filters
//! criteria by substring.

mod common;

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{s, snapshot, vgcn, write_config, write_toy_dataset};
use vgcn::graph::synthetic::{sbm, SbmConfig};
use vgcn::graph::{
    mirror_pairs, n_pairs, perturb_graph, row_normalize_features, LabeledGraph, PerturbationSpec,
    SymmetricBinaryAdjacency,
};
use vgcn::nn::{GcnParams, Mat};
use vgcn::predict::{accuracy, posterior_predictive, posterior_shift, predict_fixed};
use vgcn::train::{train_gcn_baseline, train_vgcn, TrainConfig};
use vgcn::variational::{
    build_prior, discrete_elbo, exact_discrete_elbo, exact_log_evidence, iw_elbo, kl_bernoulli,
    log_likelihood, relaxed_elbo, sample_relaxed, BernoulliEdgeDistribution, ConcreteEdgeDistribution,
    ElboData, ElboSettings, Mode, PosteriorParams, ScoreBaseline,
};

fn report(name: &str, pass: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_gcn(d: usize, q: usize, c: usize, rng: &mut ChaCha8Rng) -> GcnParams {
    GcnParams {
        w0: Array2::from_shape_simple_fn((d, q), || rng.gen_range(-1.0..1.0)),
        w1: Array2::from_shape_simple_fn((q, c), || rng.gen_range(-1.0..1.0)),
    }
}

/// `n` nodes, `d` features, `c` classes; the first `n_obs` nodes are labelled.
fn random_data(n: usize, d: usize, c: usize, n_obs: usize, rng: &mut ChaCha8Rng) -> ElboData {
    let features = Array2::from_shape_simple_fn((n, d), || rng.gen_range(0.0..1.0));
    let labels = Mat::from_shape_fn((n, c), |(i, k)| f64::from(u8::from(i % c == k)));
    let mask: Vec<bool> = (0..n).map(|i| i < n_obs).collect();
    ElboData::new(features, &labels, &mask).unwrap()
}

fn random_bernoulli(n: usize, rng: &mut ChaCha8Rng) -> BernoulliEdgeDistribution {
    let probs = (0..n_pairs(n)).map(|_| rng.gen_range(0.05..0.95)).collect();
    BernoulliEdgeDistribution::new(n, probs).unwrap()
}

fn free(logits: Vec<f64>) -> PosteriorParams {
    PosteriorParams::Free {
        logits: Mat::from_shape_vec((logits.len(), 1), logits).unwrap(),
    }
}

fn analytic_kl_oracle() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    let mut self_kl_zero = true;
    for _ in 0..1000 {
        let n = rng.gen_range(2..12);
        let mut draw = || -> Vec<f64> { (0..n_pairs(n)).map(|_| rng.gen_range(1e-3..1.0 - 1e-3)).collect() };
        let (qp, pp) = (draw(), draw());
        let q = BernoulliEdgeDistribution::new(n, qp.clone()).unwrap();
        let p = BernoulliEdgeDistribution::new(n, pp.clone()).unwrap();
        let oracle: f64 = qp
            .iter()
            .zip(&pp)
            .map(|(&a, &b)| a * a.ln() - a * b.ln() + (1.0 - a) * (1.0 - a).ln() - (1.0 - a) * (1.0 - b).ln())
            .sum();
        let kl = kl_bernoulli(&q, &p).unwrap();
        max_err = max_err.max((kl - oracle).abs());
        min_kl = min_kl.min(kl);
        self_kl_zero &= kl_bernoulli(&q, &q).unwrap() == 0.0;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = max_err <= 1e-10 && min_kl > 0.0 && self_kl_zero && secs < 1.0;
    report(
        "analytic-kl-oracle",
        pass,
        format!("max |err| {max_err:.2e}, min KL(q||p) {min_kl:.2e} for q != p, KL(q||q) = 0: {self_kl_zero}, {secs:.2}s"),
    )
}

fn relaxed_elbo_gradients_match_finite_differences() -> bool {
    let start = Instant::now();
    let (n, d, c, q) = (6, 4, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gcn = random_gcn(d, q, c, &mut rng);
    let data = random_data(n, d, c, 4, &mut rng);
    let observed = SymmetricBinaryAdjacency::from_pairs(n, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
    let prior = build_prior(&observed, 0.75, 1e-5).unwrap();
    let logits: Vec<f64> = prior.logits().iter().map(|l| l.clamp(-4.0, 4.0) + rng.gen_range(-1.0..1.0)).collect();
    let posterior = free(logits.clone());
    let settings = ElboSettings {
        tau: 0.5,
        tau_prior: 0.1,
        beta: 1.0,
        samples: 1,
        dropout: 0.0,
    };
    let eval = |g: &GcnParams, p: &PosteriorParams| {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        relaxed_elbo(g, p, &data, &prior, &settings, &mut r).unwrap()
    };
    let est = eval(&gcn, &posterior);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |fd: f64, ad: f64| {
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-4);
        worst = worst.max(rel);
    };
    for layer in 0..2 {
        let shape = if layer == 0 { gcn.w0.dim() } else { gcn.w1.dim() };
        for idx in ndarray::indices(shape) {
            let bump = |delta: f64| {
                let mut g = gcn.clone();
                let w = if layer == 0 { &mut g.w0 } else { &mut g.w1 };
                w[idx] += delta;
                eval(&g, &posterior).value
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let ad = if layer == 0 { est.grad_gcn.w0[idx] } else { est.grad_gcn.w1[idx] };
            check(fd, ad);
        }
    }
    for k in 0..logits.len() {
        let bump = |delta: f64| {
            let mut l = logits.clone();
            l[k] += delta;
            eval(&gcn, &free(l)).value
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        check(fd, est.grad_posterior[0][[k, 0]]);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient-correctness",
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over theta and phi, {secs:.2}s"),
    )
}

/// `log sum_A p(A) p(Y | X, A)` by explicit enumeration, independent of
/// the library's enumerator.
fn oracle_log_evidence(gcn: &GcnParams, prior: &BernoulliEdgeDistribution, data: &ElboData) -> f64 {
    let n = prior.n_nodes();
    let m = n_pairs(n);
    let mut total = 0.0;
    for bits in 0u32..(1 << m) {
        let on: Vec<f64> = (0..m).map(|k| f64::from(bits >> k & 1)).collect();
        let p: f64 = on
            .iter()
            .zip(prior.probs())
            .map(|(&a, &r)| if a == 1.0 { r } else { 1.0 - r })
            .product();
        total += p * log_likelihood(gcn, &mirror_pairs(&on, n), data).unwrap().exp();
    }
    total.ln()
}

fn elbo_bounds_exact_evidence() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_gap = f64::NEG_INFINITY;
    let mut oracle_err: f64 = 0.0;
    for _ in 0..100 {
        let gcn = random_gcn(3, 4, 2, &mut rng);
        let data = random_data(4, 3, 2, 3, &mut rng);
        let q = random_bernoulli(4, &mut rng);
        let p = random_bernoulli(4, &mut rng);
        let elbo = exact_discrete_elbo(&gcn, &q, &p, &data).unwrap();
        let evidence = exact_log_evidence(&gcn, &p, &data).unwrap();
        max_gap = max_gap.max(elbo - evidence);
        oracle_err = oracle_err.max((evidence - oracle_log_evidence(&gcn, &p, &data)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "elbo-bound",
        max_gap <= 1e-9 && oracle_err < 1e-10 && secs < 60.0,
        format!("max(ELBO - log evidence) {max_gap:.3e}, evidence vs oracle {oracle_err:.1e}, {secs:.2}s"),
    )
}

fn score_function_gradient_is_unbiased() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gcn = random_gcn(3, 4, 2, &mut rng);
    let data = random_data(4, 3, 2, 3, &mut rng);
    let prior = random_bernoulli(4, &mut rng);
    let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();

    // Exact gradient of the enumerated ELBO by central differences.
    let h = 1e-5;
    let exact: Vec<f64> = (0..logits.len())
        .map(|k| {
            let at = |delta: f64| {
                let mut l = logits.clone();
                l[k] += delta;
                let q = BernoulliEdgeDistribution::from_logits(4, &l).unwrap();
                exact_discrete_elbo(&gcn, &q, &prior, &data).unwrap()
            };
            (at(h) - at(-h)) / (2.0 * h)
        })
        .collect();

    let settings = ElboSettings {
        tau: 0.5,
        tau_prior: 0.5,
        beta: 1.0,
        samples: 1000,
        dropout: 0.0,
    };
    let chunks = 1000;
    let posterior = free(logits.clone());
    let mut baseline = ScoreBaseline::default();
    let mut sum = vec![0.0; logits.len()];
    let mut sum_sq = vec![0.0; logits.len()];
    for _ in 0..chunks {
        let est = discrete_elbo(&gcn, &posterior, &data, &prior, &settings, &mut baseline, &mut rng).unwrap();
        for (k, g) in est.grad_posterior[0].iter().enumerate() {
            sum[k] += g;
            sum_sq[k] += g * g;
        }
    }
    let c = chunks as f64;
    let mut worst_z: f64 = 0.0;
    for k in 0..logits.len() {
        let mean = sum[k] / c;
        let var = (sum_sq[k] / c - mean * mean) * c / (c - 1.0);
        let se = (var / c).sqrt();
        worst_z = worst_z.max((mean - exact[k]).abs() / se);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "score-function-unbiasedness",
        worst_z <= 3.0 && secs < 120.0,
        format!("{} samples, worst |mean - exact| / SE = {worst_z:.2}, {secs:.1}s", chunks * settings.samples),
    )
}

fn zero_temperature_limit() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    for lambda in [1.0 / 3.0, 1.0, 3.0f64] {
        let dist = ConcreteEdgeDistribution::new(2, vec![lambda.ln()], 0.05).unwrap();
        let hits = (0..draws).filter(|_| sample_relaxed(&dist, &mut rng).values[0] > 0.5).count();
        let empirical = hits as f64 / draws as f64;
        worst = worst.max((empirical - lambda / (1.0 + lambda)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "zero-temperature-limit",
        worst <= 0.01 && secs < 5.0,
        format!("max |P(A > 0.5) - lambda / (1 + lambda)| = {worst:.4}, {secs:.2}s"),
    )
}

fn iw_elbo_is_tighter() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gcn = random_gcn(4, 3, 2, &mut rng);
    let data = random_data(6, 4, 2, 4, &mut rng);
    let observed = SymmetricBinaryAdjacency::from_pairs(6, [(0, 1), (1, 2), (3, 4), (4, 5), (2, 5)]).unwrap();
    let prior = build_prior(&observed, 0.75, 1e-5).unwrap();
    let posterior = free(prior.logits().iter().map(|l| l.clamp(-4.0, 4.0) + rng.gen_range(-1.0..1.0)).collect());
    let settings = ElboSettings {
        tau: 0.5,
        tau_prior: 0.1,
        beta: 1.0,
        samples: 16,
        dropout: 0.0,
    };
    let reps = 200;
    let (mut iw, mut elbo) = (0.0, 0.0);
    for r in 0..reps {
        let mut a = ChaCha8Rng::seed_from_u64(1000 + r);
        let mut b = ChaCha8Rng::seed_from_u64(5000 + r);
        iw += iw_elbo(&gcn, &posterior, &data, &prior, &settings, &mut a).unwrap().value;
        elbo += relaxed_elbo(&gcn, &posterior, &data, &prior, &settings, &mut b).unwrap().value;
    }
    let (iw, elbo) = (iw / reps as f64, elbo / reps as f64);
    let secs = start.elapsed().as_secs_f64();
    report(
        "iw-elbo-tightness",
        iw >= elbo && secs < 60.0,
        format!("mean IW-ELBO {iw:.4} vs mean ELBO {elbo:.4} over {reps} runs, {secs:.2}s"),
    )
}

const E2E_SEEDS: u64 = 10;

struct E2eRun {
    vgcn_acc: f64,
    gcn_acc: f64,
    n_significant: usize,
    mean_abs_delta: f64,
}

/// 60-node two-block SBM whose observed graph has 30% of its edges
/// removed and the same number of non-edges added.
fn corrupted_sbm(seed: u64) -> (LabeledGraph, LabeledGraph) {
    let clean = sbm(&SbmConfig {
        seed,
        ..SbmConfig::default()
    })
    .unwrap();
    let m = (0.3 * clean.adjacency.n_edges() as f64).round() as usize;
    let spec = PerturbationSpec {
        n_add: m,
        n_remove: m,
        seed: 1000 + seed,
        mode: Default::default(),
    };
    let corrupted = clean.with_adjacency(perturb_graph(&clean.adjacency, &spec).unwrap()).unwrap();
    (clean, corrupted)
}

fn e2e_run(seed: u64, beta: f64) -> E2eRun {
    let (_, graph) = corrupted_sbm(seed);
    let cfg = TrainConfig {
        seed,
        beta,
        ..TrainConfig::default()
    };
    let features = row_normalize_features(&graph.features);
    let fit = train_vgcn(&cfg, &graph).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let pred = posterior_predictive(&fit.gcn, &fit.posterior, Mode::Relaxed, &features, cfg.s_pred, cfg.tau, &mut rng).unwrap();
    let vgcn_acc = accuracy(&pred, &graph.labels, &graph.masks.test).unwrap();

    let base = train_gcn_baseline(&cfg, &graph, &graph.adjacency).unwrap();
    let pred = predict_fixed(&base.gcn, &features, &graph.adjacency.to_dense()).unwrap();
    let gcn_acc = accuracy(&pred, &graph.labels, &graph.masks.test).unwrap();

    let q = fit.posterior.to_concrete(Mode::Relaxed, cfg.tau).unwrap();
    let shift = posterior_shift(&fit.prior, &q, 0.02).unwrap();
    E2eRun {
        vgcn_acc,
        gcn_acc,
        n_significant: shift.n_significant,
        mean_abs_delta: shift.mean_abs_delta,
    }
}

/// One run per seed, in parallel.
fn e2e_runs(beta: f64) -> (Vec<E2eRun>, f64) {
    let start = Instant::now();
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..E2E_SEEDS).map(|seed| scope.spawn(move || e2e_run(seed, beta))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    (runs, start.elapsed().as_secs_f64())
}

fn default_beta_runs() -> &'static (Vec<E2eRun>, f64) {
    static RUNS: OnceLock<(Vec<E2eRun>, f64)> = OnceLock::new();
    RUNS.get_or_init(|| e2e_runs(1e-2))
}

fn end_to_end_vgcn_matches_or_beats_gcn() -> bool {
    let (runs, secs) = default_beta_runs();
    let v = runs.iter().map(|r| r.vgcn_acc).sum::<f64>() / runs.len() as f64;
    let g = runs.iter().map(|r| r.gcn_acc).sum::<f64>() / runs.len() as f64;
    report(
        "end-to-end-learning",
        v - g >= 0.0 && *secs < 300.0,
        format!("mean test accuracy VGCN {v:.4} vs GCN {g:.4} over {E2E_SEEDS} seeds, {} epochs, {secs:.1}s",
            TrainConfig::default().max_epochs),
    )
}

fn posterior_moves_unless_kl_dominates() -> bool {
    let (runs, secs) = default_beta_runs();
    let significant: usize = runs.iter().map(|r| r.n_significant).sum();
    let per_seed: Vec<usize> = runs.iter().map(|r| r.n_significant).collect();
    let (heavy, heavy_secs) = e2e_runs(1e3);
    let worst_heavy = heavy.iter().map(|r| r.mean_abs_delta).fold(0.0, f64::max);
    // The default-beta runs are shared with the end-to-end criterion.
    let pass = significant >= 1 && worst_heavy < 0.01 && *secs < 300.0 && heavy_secs < 300.0;
    report(
        "posterior-movement",
        pass,
        format!(
            "beta=1e-2: {significant} pairs shifted > 0.02 (per seed {per_seed:?}); \
             beta=1e3: max mean |shift| {worst_heavy:.4} ({heavy_secs:.1}s)"
        ),
    )
}

/// Reads one of the real citation datasets from `$VGCN_<NAME>_DIR`.
fn full_scale_check(name: &str, target: f64) -> Option<(f64, bool)> {
    let dir = std::env::var(format!("VGCN_{}_DIR", name.to_uppercase())).ok()?;
    let graph = vgcn::graph::load_dataset(&vgcn::graph::DatasetPaths::in_dir(Path::new(&dir))).unwrap();
    let identity = SymmetricBinaryAdjacency::empty(graph.n_nodes());
    let cfg = TrainConfig {
        lr: 0.01,
        max_epochs: 200,
        ..TrainConfig::default()
    };
    let fit = train_gcn_baseline(&cfg, &graph, &identity).unwrap();
    let features = row_normalize_features(&graph.features);
    let pred = predict_fixed(&fit.gcn, &features, &identity.to_dense()).unwrap();
    let acc = accuracy(&pred, &graph.labels, &graph.masks.test).unwrap();
    Some((acc, (acc - target).abs() <= 0.02))
}

/// Optional: skipped (and not counted) unless the dataset directories are set.
fn full_scale_identity_gcn() -> bool {
    let mut all = true;
    for (name, target) in [("citeseer", 0.584), ("cora", 0.591)] {
        match full_scale_check(name, target) {
            Some((acc, pass)) => {
                all &= report(
                    &format!("full-scale-{name}"),
                    pass,
                    format!("identity-adjacency GCN test accuracy {acc:.4}, target {target} +/- 0.02"),
                )
            }
            None => println!("SKIP full-scale-{name}: VGCN_{}_DIR not set", name.to_uppercase()),
        }
    }
    all
}

/// Runs `args` into `out`, snapshots the outputs, and repeats from scratch.
fn rerun_identical(out: &Path, args: &[&str]) -> bool {
    let first = {
        assert_eq!(vgcn(args), 0, "{args:?}");
        snapshot(out)
    };
    std::fs::remove_dir_all(out).unwrap();
    assert_eq!(vgcn(args), 0, "{args:?}");
    let second = snapshot(out);
    !first.is_empty() && first == second
}

fn every_command_is_deterministic() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    std::fs::create_dir(&data).unwrap();
    let (_, paths) = write_toy_dataset(&data, 24, 3);
    let train = serde_json::json!({"max_epochs": 30, "lr": 0.01, "seed": 5});
    let vcfg = write_config(&root.join("vgcn.json"), &paths, "vgcn", train.clone());
    let gcfg = write_config(&root.join("gcn.json"), &paths, "gcn", train);
    let grid = root.join("grid.json");
    std::fs::write(&grid, r#"[{"beta": 0.01}, {"beta": 1.0}]"#).unwrap();

    let (knn, pert, vt, gt) = (root.join("knn"), root.join("pert"), root.join("vt"), root.join("gt"));
    let (ev, an, gr) = (root.join("ev"), root.join("an"), root.join("grid"));
    let f = s(&paths.features);
    let e = s(&paths.edges);
    let checks: Vec<(&str, bool)> = vec![
        ("prepare-knn", rerun_identical(&knn, &["prepare-knn", "--features", f, "--k", "3", "--out", s(&knn)])),
        (
            "perturb",
            rerun_identical(&pert, &["perturb", "--features", f, "--edges", e, "--add", "5", "--remove", "5", "--seed", "7", "--out", s(&pert)]),
        ),
        ("train vgcn", rerun_identical(&vt, &["train", "--config", s(&vcfg), "--out", s(&vt)])),
        ("train gcn", rerun_identical(&gt, &["train", "--config", s(&gcfg), "--out", s(&gt)])),
        ("evaluate", rerun_identical(&ev, &["evaluate", "--checkpoint", s(&vt), "--out", s(&ev)])),
        ("analyze-posterior", rerun_identical(&an, &["analyze-posterior", "--checkpoint", s(&vt), "--out", s(&an)])),
        (
            "grid",
            rerun_identical(&gr, &["grid", "--config", s(&vcfg), "--grid", s(&grid), "--replications", "2", "--jobs", "2", "--out", s(&gr)]),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        "determinism",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} commands rerun byte-identical (histories, checkpoints, results)", checks.len())
        } else {
            format!("outputs differ for {failed:?}")
        },
    )
}

type Criterion = (&'static str, fn() -> bool);

fn main() {
    let criteria: [Criterion; 10] = [
        ("analytic-kl-oracle", analytic_kl_oracle),
        ("gradient-correctness", relaxed_elbo_gradients_match_finite_differences),
        ("elbo-bound", elbo_bounds_exact_evidence),
        ("score-function-unbiasedness", score_function_gradient_is_unbiased),
        ("zero-temperature-limit", zero_temperature_limit),
        ("iw-elbo-tightness", iw_elbo_is_tighter),
        ("end-to-end-learning", end_to_end_vgcn_matches_or_beats_gcn),
        ("posterior-movement", posterior_moves_unless_kl_dominates),
        ("determinism", every_command_is_deterministic),
        ("full-scale", full_scale_identity_gcn),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, run) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let skipped = name == "full-scale"
            && ["VGCN_CITESEER_DIR", "VGCN_CORA_DIR"].iter().all(|v| std::env::var_os(v).is_none());
        let pass = run();
        if skipped {
            continue;
        }
        ran += 1;
        if !pass {
            failed.push(name);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
