//! Library results against the from-scratch references in `vager-testkit`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vager_core::classify::{self, LogisticObjective, TrainLRConfig};
use vager_core::data::{class_means, mean_vector, FeatureSet, Record};
use vager_core::eval::{metrics, regression};
use vager_core::graph::{
    build_graph, novel_similarity, similarity_ratio, top_k_neighbors, SimilarityVector,
};
use vager_core::transfer::{infer_embedding, oos_objective, precompute_solver, transfer_weights};
use vager_core::vager::{
    train_vager, vager_gradients, vager_loss, BaseWeights, EmbeddingModel, TrainingStats,
    VagerTrainConfig,
};
use vager_core::{graph::AnalogyGraph, seed};
use vager_testkit as tk;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn to_mat(m: &DMatrix<f64>) -> tk::Mat {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    let mut a = (&g + g.transpose()) * 0.25;
    for i in 0..n {
        a[(i, i)] = 1.0;
    }
    a
}

fn model_from(v: DMatrix<f64>, t: DMatrix<f64>) -> EmbeddingModel {
    let n = v.nrows();
    EmbeddingModel {
        class_ids: (0..n as u64).collect(),
        weights: &v * &t,
        adjacency: &v * v.transpose(),
        v,
        t,
        beta: 1.0,
        stats: TrainingStats {
            final_loss: 0.0,
            outer_iterations: 0,
            loss_trace: vec![0.0],
        },
        pinv_cache: None,
    }
}

fn sim(values: Vec<f64>) -> SimilarityVector {
    SimilarityVector {
        class_ids: (0..values.len() as u64).collect(),
        values: DVector::from_vec(values),
    }
}

#[test]
fn loss_matches_loop_oracle() {
    let mut rng = seed::rng(1);
    for _ in 0..10 {
        let (n, q, p) = (
            rng.random_range(2..10),
            rng.random_range(1..5),
            rng.random_range(1..7),
        );
        let (v, t, w, a) = (
            gaussian(&mut rng, n, q),
            gaussian(&mut rng, q, p),
            gaussian(&mut rng, n, p),
            symmetric(&mut rng, n),
        );
        let beta = rng.random_range(0.0..2.0);
        let lib = vager_loss(&v, &t, &w, &a, beta).unwrap();
        let oracle = tk::vager_loss(&to_mat(&v), &to_mat(&t), &to_mat(&w), &to_mat(&a), beta);
        assert!(
            (lib - oracle).abs() <= 1e-10 * oracle.max(1.0),
            "{lib} vs {oracle}"
        );
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = seed::rng(2);
    for case in 0..20 {
        let (n, q, p) = (
            rng.random_range(2..=12),
            rng.random_range(1..=6),
            rng.random_range(1..=8),
        );
        let beta = [0.0, 0.5, 1.0][case % 3];
        let (v, t, w, a) = (
            gaussian(&mut rng, n, q),
            gaussian(&mut rng, q, p),
            gaussian(&mut rng, n, p),
            symmetric(&mut rng, n),
        );
        let (dv, dt) = vager_gradients(&v, &t, &w, &a, beta).unwrap();
        let (wm, am, tm) = (to_mat(&w), to_mat(&a), to_mat(&t));
        let vm = to_mat(&v);
        let flat_v: Vec<f64> = vm.iter().flatten().copied().collect();
        let fd_v = tk::central_gradient(
            |x| {
                let vv: tk::Mat = x.chunks(q).map(<[f64]>::to_vec).collect();
                tk::vager_loss(&vv, &tm, &wm, &am, beta)
            },
            &flat_v,
            1e-5,
        );
        let flat_t: Vec<f64> = tm.iter().flatten().copied().collect();
        let fd_t = tk::central_gradient(
            |x| {
                let tt: tk::Mat = x.chunks(p).map(<[f64]>::to_vec).collect();
                tk::vager_loss(&vm, &tt, &wm, &am, beta)
            },
            &flat_t,
            1e-5,
        );
        let lib_v: Vec<f64> = to_mat(&dv).into_iter().flatten().collect();
        let lib_t: Vec<f64> = to_mat(&dt).into_iter().flatten().collect();
        for (lib, fd) in lib_v.iter().zip(&fd_v).chain(lib_t.iter().zip(&fd_t)) {
            let rel = (lib - fd).abs() / lib.abs().max(fd.abs()).max(1.0);
            assert!(rel < 1e-5, "case {case}: {lib} vs {fd}");
        }
    }
}

#[test]
fn planted_instance_is_recovered() {
    let mut rng = seed::rng(3);
    let (n, q, p) = (6, 6, 8);
    let v0 = gaussian(&mut rng, n, q) * 0.5;
    let t0 = gaussian(&mut rng, q, p);
    let weights = BaseWeights {
        class_ids: (0..n as u64).collect(),
        w: &v0 * &t0,
    };
    let graph = AnalogyGraph {
        class_ids: (0..n as u64).collect(),
        adjacency: &v0 * v0.transpose(),
    };
    let mut cfg = VagerTrainConfig::for_classes(n, p, 9);
    cfg.q = q;
    cfg.max_outer_iters = 5000;
    cfg.rel_tol = 1e-12;
    let model = train_vager(&weights, &graph, &cfg).unwrap();
    assert!(
        model.stats.final_loss <= 1e-4,
        "loss {}",
        model.stats.final_loss
    );
    assert!(model.stats.loss_trace.windows(2).all(|w| w[1] <= w[0]));
}

fn check_against_lstsq(v: DMatrix<f64>, a: Vec<f64>) {
    let model = model_from(v.clone(), DMatrix::from_element(v.ncols(), 2, 1.0));
    let a = sim(a);
    let got = infer_embedding(&model, &a).unwrap();
    let oracle = tk::min_norm_lstsq(&to_mat(&v), a.values.as_slice(), 1e-12);
    for (g, o) in got.v.iter().zip(&oracle) {
        assert!((g - o).abs() < 1e-8, "{g} vs {o}");
    }
    let cached = infer_embedding(&precompute_solver(model).unwrap(), &a).unwrap();
    assert!((&cached.v - &got.v).amax() < 1e-12);
}

#[test]
fn embedding_matches_lstsq_oracle() {
    let mut rng = seed::rng(4);
    for case in 0..20 {
        let n = rng.random_range(3..12);
        let q = rng.random_range(1..n);
        let mut v = gaussian(&mut rng, n, q);
        if case % 3 == 0 {
            let src = v.row(0).clone_owned();
            v.set_row(1, &src);
            v.set_row(2, &src);
        }
        if case % 4 == 1 && q > 1 {
            // rank-deficient: last column a combination of the first
            let c = v.column(0) * 2.0;
            v.set_column(q - 1, &c);
        }
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_against_lstsq(v, a);
    }
}

#[test]
fn embedding_is_a_local_optimum() {
    let mut rng = seed::rng(5);
    for _ in 0..20 {
        let (n, q) = (rng.random_range(3..10), rng.random_range(1..4));
        let v = gaussian(&mut rng, n, q);
        let model = model_from(v.clone(), DMatrix::from_element(q, 2, 1.0));
        let a = sim((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let best = infer_embedding(&model, &a).unwrap();
        for _ in 0..50 {
            let delta = DVector::from_fn(q, |_, _| rng.random_range(-1e-3..1e-3));
            let other = oos_objective(&(&best.v + delta), &a, &v).unwrap();
            assert!(other >= best.residual - 1e-12);
        }
    }
}

#[test]
fn transfer_is_naive_product() {
    let mut rng = seed::rng(6);
    let (n, q, p) = (5, 3, 4);
    let model = model_from(gaussian(&mut rng, n, q), gaussian(&mut rng, q, p));
    let a = sim((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let e = infer_embedding(&model, &a).unwrap();
    let c = transfer_weights(&e, &model, 1000).unwrap();
    let naive = tk::matvec(&tk::transpose(&to_mat(&model.t)), e.v.as_slice());
    for (x, y) in c.w.iter().zip(&naive) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn auc_equals_pair_counting() {
    let mut rng = seed::rng(7);
    for case in 0..100 {
        let np = rng.random_range(1..40);
        let nn = rng.random_range(1..40);
        // coarse grids force ties in a third of the cases
        let draw = |rng: &mut ChaCha8Rng| {
            let x: f64 = rng.random();
            if case % 3 == 0 {
                (x * 5.0).floor()
            } else {
                x
            }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        assert_eq!(
            metrics::roc_auc(&pos, &neg).unwrap(),
            tk::pair_count_auc(&pos, &neg)
        );
    }
}

#[test]
fn regression_matches_normal_equations() {
    let mut rng = seed::rng(8);
    for _ in 0..20 {
        let pts: Vec<(f64, f64)> = (0..rng.random_range(3..30))
            .map(|_| {
                let x: f64 = rng.random_range(0.5..2.0);
                (x, 0.7 * x - 0.2 + 0.1 * rng.random_range(-1.0..1.0))
            })
            .collect();
        let fit = regression::sr_improvement_regression(&pts).unwrap();
        let (slope, intercept) = tk::normal_equations_fit(&pts);
        assert!((fit.slope - slope).abs() < 1e-10);
        assert!((fit.intercept - intercept).abs() < 1e-10);
        assert!((fit.pearson_r - tk::pearson(&pts)).abs() < 1e-10);
    }
}

fn random_features(rng: &mut ChaCha8Rng, classes: u64, per_class: usize, d: usize) -> FeatureSet {
    let mut records = Vec::new();
    for c in 0..classes {
        let shift: f64 = rng.random_range(0.5..3.0);
        for s in 0..per_class {
            records.push(Record {
                class_id: c * 7 + 3,
                sample_id: c * 1000 + s as u64,
                x: (0..d)
                    .map(|_| shift + rng.random_range(-1.0..1.0))
                    .collect(),
            });
        }
    }
    FeatureSet::new(d, records).unwrap()
}

#[test]
fn means_cosines_and_neighbors_match_references() {
    let mut rng = seed::rng(9);
    let fs = random_features(&mut rng, 6, 9, 5);
    let means = class_means(&fs).unwrap();
    for (i, id) in means.class_ids.iter().enumerate() {
        let rows: Vec<&[f64]> = fs
            .class_records(*id)
            .iter()
            .map(|r| r.x.as_slice())
            .collect();
        let oracle = tk::running_mean(&rows);
        for (m, o) in means.row(i).iter().zip(&oracle) {
            assert!((m - o).abs() < 1e-12);
        }
    }
    let graph = build_graph(&means).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let c = if i == j {
                1.0
            } else {
                tk::cosine(means.row(i).as_slice(), means.row(j).as_slice())
            };
            assert!((graph.adjacency[(i, j)] - c).abs() < 1e-12);
        }
    }
    let probe = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
    let a = novel_similarity(&means, &probe).unwrap();
    let mut order: Vec<(u64, f64)> = a
        .class_ids
        .iter()
        .copied()
        .zip(a.values.iter().copied())
        .collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    for k in 1..=6 {
        assert_eq!(top_k_neighbors(&a, k).unwrap(), order[..k].to_vec());
        let top = order[..k].iter().map(|p| p.1).sum::<f64>() / k as f64;
        let all = order.iter().map(|p| p.1).sum::<f64>() / 6.0;
        assert!((similarity_ratio(&a, k).unwrap() - top / all).abs() < 1e-12);
    }
}

#[test]
fn weighted_lr_matches_brute_force() {
    let mut rng = seed::rng(10);
    let fs = random_features(&mut rng, 12, 5, 4);
    let means = class_means(&fs).unwrap();
    let weights = BaseWeights {
        class_ids: means.class_ids.clone(),
        w: gaussian(&mut rng, 12, 5),
    };
    let novel = DVector::from_fn(4, |_, _| rng.random_range(0.0..2.0));
    let got = classify::weighted_lr_baseline(&weights, &means, &novel, 1000).unwrap();
    let mut sims: Vec<(usize, f64)> = (0..12)
        .map(|i| (i, tk::cosine(means.row(i).as_slice(), novel.as_slice())))
        .collect();
    sims.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(means.class_ids[a.0].cmp(&means.class_ids[b.0]))
    });
    let top = &sims[..10];
    let norm = top.iter().map(|s| s.1 * s.1).sum::<f64>().sqrt();
    for j in 0..5 {
        let expect: f64 = top.iter().map(|(i, s)| s / norm * weights.w[(*i, j)]).sum();
        assert!((got.w[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn logistic_gradient_matches_central_differences() {
    let mut rng = seed::rng(11);
    let xs: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let pos: Vec<&[f64]> = xs[..4].iter().map(Vec::as_slice).collect();
    let neg: Vec<&[f64]> = xs[4..].iter().map(Vec::as_slice).collect();
    let anchor = [0.3, -0.2, 0.1, 0.5];
    for anchor in [None, Some(&anchor[..])] {
        let obj = LogisticObjective::new(&pos, &neg, 0.7, anchor).unwrap();
        let w = [0.2, -0.4, 0.9, 0.1];
        let fd = tk::central_gradient(|x| obj.value(x), &w, 1e-6);
        for (g, f) in obj.gradient(&w).iter().zip(&fd) {
            assert!((g - f).abs() < 1e-6, "{g} vs {f}");
        }
    }
}

#[test]
fn logistic_separable_data() {
    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }
    let mut rng = seed::rng(12);
    let sample = |rng: &mut ChaCha8Rng, c: f64| -> Vec<f64> {
        (0..4)
            .map(|_| c + 0.3 * rng.random_range(-1.0..1.0))
            .collect()
    };
    let train_p: Vec<Vec<f64>> = (0..20).map(|_| sample(&mut rng, 1.5)).collect();
    let train_n: Vec<Vec<f64>> = (0..20).map(|_| sample(&mut rng, -1.5)).collect();
    let test_p: Vec<Vec<f64>> = (0..50).map(|_| sample(&mut rng, 1.5)).collect();
    let test_n: Vec<Vec<f64>> = (0..50).map(|_| sample(&mut rng, -1.5)).collect();
    let c = classify::train_logistic(
        1,
        &refs(&train_p),
        &refs(&train_n),
        &TrainLRConfig::with_seed(4),
        None,
    )
    .unwrap();
    let sp = c.predict_batch(&refs(&test_p)).unwrap();
    let sn = c.predict_batch(&refs(&test_n)).unwrap();
    assert!(metrics::roc_auc(&sp, &sn).unwrap() >= 0.99);
}

#[test]
fn means_use_every_record() {
    let mut rng = seed::rng(13);
    let fs = random_features(&mut rng, 1, 40, 3);
    let refs: Vec<&Record> = fs.records().iter().collect();
    let rows: Vec<&[f64]> = refs.iter().map(|r| r.x.as_slice()).collect();
    let oracle = tk::running_mean(&rows);
    for (m, o) in mean_vector(&refs).iter().zip(&oracle) {
        assert!((m - o).abs() < 1e-12);
    }
}
