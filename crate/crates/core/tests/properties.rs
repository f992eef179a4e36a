use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use vager_core::classify::{
    fuse_voting, sigmoid, train_logistic_traced, LinearClassifier, Provenance, TrainLRConfig,
};
use vager_core::data::{class_means, split_kshot, FeatureSet, Record};
use vager_core::eval::metrics::{f1_score, roc_auc};
use vager_core::graph::{
    build_graph, novel_similarity, similarity_ratio, top_k_neighbors, AnalogyGraph,
    SimilarityVector,
};
use vager_core::transfer::{infer_embedding, precompute_solver, transfer_weights};
use vager_core::vager::{
    train_vager, vager_gradients, vager_loss, BaseWeights, EmbeddingModel, TrainingStats,
    VagerTrainConfig,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 1..max)
}

fn features() -> impl Strategy<Value = FeatureSet> {
    (1usize..5, 2usize..5, 2usize..8).prop_flat_map(|(d, classes, per)| {
        prop::collection::vec(prop::collection::vec(-1e3..1e3f64, d), classes * per).prop_map(
            move |xs| {
                let records = xs
                    .into_iter()
                    .enumerate()
                    .map(|(i, x)| Record {
                        class_id: (i / per) as u64 * 3 + 1,
                        sample_id: i as u64,
                        x,
                    })
                    .collect();
                FeatureSet::new(d, records).unwrap()
            },
        )
    })
}

fn model(v: DMatrix<f64>, t: DMatrix<f64>) -> EmbeddingModel {
    EmbeddingModel {
        class_ids: (0..v.nrows() as u64).collect(),
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

fn rotation(q: usize, angle: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(q, q);
    if q >= 2 {
        let (s, c) = angle.sin_cos();
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_in_unit_interval_and_antisymmetric(pos in scores(30), neg in scores(30)) {
        let a = roc_auc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let b = roc_auc(&neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_maps(pos in scores(30), neg in scores(30)) {
        let f = |s: &f64| (0.5 * s).exp() * 3.0 + 1.0;
        let a = roc_auc(&pos, &neg).unwrap();
        let pf: Vec<f64> = pos.iter().map(f).collect();
        let nf: Vec<f64> = neg.iter().map(f).collect();
        prop_assert_eq!(a, roc_auc(&pf, &nf).unwrap());
        let ps: Vec<f64> = pos.iter().copied().map(sigmoid).collect();
        let ns: Vec<f64> = neg.iter().copied().map(sigmoid).collect();
        prop_assert_eq!(a, roc_auc(&ps, &ns).unwrap());
    }

    #[test]
    fn f1_in_unit_interval(s in scores(40), seed in any::<u64>()) {
        let labels: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let f = f1_score(&s, &labels, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn sigmoid_symmetry(z in -700.0..700.0f64) {
        prop_assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&sigmoid(z)));
    }

    #[test]
    fn csv_and_binary_round_trip(fs in features()) {
        prop_assert_eq!(&FeatureSet::from_csv(&fs.to_csv()).unwrap(), &fs);
        prop_assert_eq!(&FeatureSet::from_binary(&fs.to_binary()).unwrap(), &fs);
    }

    #[test]
    fn kshot_split_partitions_the_class(fs in features(), k in 1usize..7, seed in any::<u64>()) {
        let id = fs.class_ids()[0];
        let size = fs.class_size(id);
        prop_assume!(k < size);
        let (train, test) = split_kshot(&fs, id, k, seed).unwrap();
        prop_assert_eq!(train.len(), k);
        prop_assert_eq!(train.len() + test.len(), size);
        let a: HashSet<u64> = train.records().iter().map(|r| r.sample_id).collect();
        let b: HashSet<u64> = test.records().iter().map(|r| r.sample_id).collect();
        prop_assert!(a.is_disjoint(&b));
        let all: HashSet<u64> = fs.class_records(id).iter().map(|r| r.sample_id).collect();
        prop_assert_eq!(a.union(&b).copied().collect::<HashSet<_>>(), all);
        let (again, _) = split_kshot(&fs, id, k, seed).unwrap();
        prop_assert_eq!(again, train);
    }

    #[test]
    fn graph_is_symmetric_with_unit_diagonal(fs in features()) {
        let Ok(means) = class_means(&fs) else { return Ok(()) };
        let g = build_graph(&means).unwrap();
        for i in 0..g.n() {
            prop_assert_eq!(g.adjacency[(i, i)], 1.0);
            for j in 0..g.n() {
                prop_assert_eq!(g.adjacency[(i, j)], g.adjacency[(j, i)]);
                prop_assert!(g.adjacency[(i, j)].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn similarity_is_scale_invariant(fs in features(), probe in prop::collection::vec(0.1..5.0f64, 4), c in 0.01..100.0f64) {
        let Ok(means) = class_means(&fs) else { return Ok(()) };
        let probe = DVector::from_iterator(fs.d(), probe.into_iter().cycle().take(fs.d()));
        let a = novel_similarity(&means, &probe).unwrap();
        let b = novel_similarity(&means, &(&probe * c)).unwrap();
        prop_assert!((&a.values - &b.values).amax() < 1e-12);
    }

    #[test]
    fn similarity_ratio_bounds(values in prop::collection::vec(0.01..1.0f64, 2..20), k in 1usize..20) {
        let n = values.len();
        let a = SimilarityVector { class_ids: (0..n as u64).collect(), values: DVector::from_vec(values) };
        let k = k.min(n);
        let sr = similarity_ratio(&a, k).unwrap();
        let top = top_k_neighbors(&a, k).unwrap();
        prop_assert!(sr >= 1.0 - 1e-12);
        prop_assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
        if k == n {
            prop_assert!((sr - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_rotation_invariant(v in matrix(5, 3), t in matrix(3, 4), w in matrix(5, 4), angle in 0.0..6.3f64, beta in 0.0..2.0f64) {
        let a = DMatrix::identity(5, 5);
        let r = rotation(3, angle);
        let base = vager_loss(&v, &t, &w, &a, beta).unwrap();
        let turned = vager_loss(&(&v * &r), &(r.transpose() * &t), &w, &a, beta).unwrap();
        prop_assert!((base - turned).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn loss_is_permutation_equivariant(v in matrix(4, 2), t in matrix(2, 3), w in matrix(4, 3), g in matrix(4, 4)) {
        let a = (&g + g.transpose()) * 0.5;
        let perm = [2usize, 0, 3, 1];
        let p = DMatrix::from_fn(4, 4, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let base = vager_loss(&v, &t, &w, &a, 1.0).unwrap();
        let moved = vager_loss(&(&p * &v), &t, &(&p * &w), &(&p * &a * p.transpose()), 1.0).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn gradients_vanish_at_exact_fit(v in matrix(4, 2), t in matrix(2, 3)) {
        let w = &v * &t;
        let a = &v * v.transpose();
        let (dv, dt) = vager_gradients(&v, &t, &w, &a, 1.0).unwrap();
        prop_assert!(dv.amax() < 1e-10 && dt.amax() < 1e-10);
    }

    #[test]
    fn transfer_is_linear(v in matrix(6, 3), t in matrix(3, 4), x in prop::collection::vec(-1.0..1.0f64, 6), y in prop::collection::vec(-1.0..1.0f64, 6), c in -3.0..3.0f64) {
        let m = model(v, t);
        let sim = |vals: Vec<f64>| SimilarityVector { class_ids: (0..6).collect(), values: DVector::from_vec(vals) };
        let ex = infer_embedding(&m, &sim(x.clone())).unwrap();
        let ey = infer_embedding(&m, &sim(y.clone())).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + c * b).collect();
        let ez = infer_embedding(&m, &sim(combo)).unwrap();
        prop_assert!((&ez.v - (&ex.v + &ey.v * c)).amax() < 1e-9);
        let wx = transfer_weights(&ex, &m, 1).unwrap();
        let wy = transfer_weights(&ey, &m, 1).unwrap();
        let wz = transfer_weights(&ez, &m, 1).unwrap();
        for j in 0..4 {
            prop_assert!((wz.w[j] - (wx.w[j] + c * wy.w[j])).abs() < 1e-8);
        }
    }

    #[test]
    fn cached_solver_agrees(v in matrix(7, 3), a in prop::collection::vec(-1.0..1.0f64, 7)) {
        let m = model(v, DMatrix::from_element(3, 2, 0.5));
        let a = SimilarityVector { class_ids: (0..7).collect(), values: DVector::from_vec(a) };
        let direct = infer_embedding(&m, &a).unwrap();
        let cached = infer_embedding(&precompute_solver(m).unwrap(), &a).unwrap();
        prop_assert!((&direct.v - &cached.v).amax() < 1e-10);
        prop_assert!((direct.residual - cached.residual).abs() < 1e-9);
    }

    #[test]
    fn voting_with_zero_lambda_is_identity(w in prop::collection::vec(-5.0..5.0f64, 2..10), m in prop::collection::vec(-5.0..5.0f64, 10)) {
        let p = w.len();
        let trans = LinearClassifier::new(1, Provenance::Transferred, w).unwrap();
        let model = LinearClassifier::new(1, Provenance::Model, m[..p].to_vec()).unwrap();
        prop_assert_eq!(&fuse_voting(&trans, &model, 0.0).unwrap().w, &trans.w);
    }

    #[test]
    fn vager_trace_never_increases(v in matrix(6, 6), w in matrix(6, 5), seed in any::<u64>(), beta in 0.0..2.0f64) {
        let g = &v * v.transpose();
        let d = g.diagonal().map(|x| 1.0 / x.sqrt());
        let a = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { g[(i, j)] * d[i] * d[j] });
        let ids: Vec<u64> = (0..6).collect();
        let mut cfg = VagerTrainConfig::for_classes(6, 5, seed);
        cfg.beta = beta.max(1e-3);
        cfg.max_outer_iters = 40;
        let m = train_vager(
            &BaseWeights { class_ids: ids.clone(), w },
            &AnalogyGraph { class_ids: ids, adjacency: a },
            &cfg,
        ).unwrap();
        prop_assert!(m.stats.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(m.stats.final_loss, *m.stats.loss_trace.last().unwrap());
    }

    #[test]
    fn backtracking_logistic_never_increases(xs in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 6..20), seed in any::<u64>()) {
        let (pos, neg) = xs.split_at(xs.len() / 3);
        let pos: Vec<&[f64]> = pos.iter().map(Vec::as_slice).collect();
        let neg: Vec<&[f64]> = neg.iter().map(Vec::as_slice).collect();
        let cfg = TrainLRConfig { backtracking: true, epochs: 30, ..TrainLRConfig::with_seed(seed) };
        let (_, trace) = train_logistic_traced(1, &pos, &neg, &cfg, None).unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
