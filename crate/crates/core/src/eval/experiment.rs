//! k-shot binary and m-way k-shot experiment protocols.
//!
//! Trial `i` runs with seed `seed::child(master, i)`; within a trial, novel
//! class `j` (ascending id order) uses `seed::child(trial_seed, j)`. Trials run
//! in parallel and are reassembled in index order, so a report depends only on
//! its inputs and the master seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    fuse_initializing, fuse_tuning, fuse_voting, multiclass_decide, sample_without_replacement,
    train_base_classifiers, train_logistic, train_softmax, weighted_lr_baseline, LinearClassifier,
    TrainLRConfig,
};
use crate::data::{class_means, mean_vector, split_kshot, ClassMeans, FeatureSet, Record};
use crate::eval::metrics::{
    f1_score, roc_auc, roc_curve, top1_accuracy, top1_micro, top1_per_class,
};
use crate::eval::regression::{sr_improvement_regression, RegressionResult};
use crate::graph::{
    build_graph, novel_similarity, similarity_ratio, top_k_neighbors, AnalogyGraph,
    SimilarityVector,
};
use crate::seed::{self, tag};
use crate::transfer::{infer_embedding, precompute_solver, transfer_weights, NovelEmbedding};
use crate::vager::{train_vager, BaseWeights, EmbeddingModel, VagerTrainConfig};
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "vager")]
    Vager,
    #[serde(rename = "vager+initializing")]
    VagerInitializing,
    #[serde(rename = "vager+tuning")]
    VagerTuning,
    #[serde(rename = "vager+voting")]
    VagerVoting,
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "weighted-lr")]
    WeightedLr,
    /// Multinomial logistic regression; m-way only.
    #[serde(rename = "softmax")]
    Softmax,
    /// Told the true label; an upper bound for harness checks.
    #[serde(rename = "oracle")]
    Oracle,
    /// Seeded random scores or guesses.
    #[serde(rename = "chance")]
    Chance,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Vager,
        Method::VagerInitializing,
        Method::VagerTuning,
        Method::VagerVoting,
        Method::Lr,
        Method::WeightedLr,
        Method::Softmax,
        Method::Oracle,
        Method::Chance,
    ];

    /// The methods of the binary comparison table.
    pub const BINARY_TABLE: [Method; 6] = [
        Method::Vager,
        Method::VagerInitializing,
        Method::VagerTuning,
        Method::VagerVoting,
        Method::Lr,
        Method::WeightedLr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vager => "vager",
            Method::VagerInitializing => "vager+initializing",
            Method::VagerTuning => "vager+tuning",
            Method::VagerVoting => "vager+voting",
            Method::Lr => "lr",
            Method::WeightedLr => "weighted-lr",
            Method::Softmax => "softmax",
            Method::Oracle => "oracle",
            Method::Chance => "chance",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("no methods given"));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    F1,
    Top1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::F1 => "f1",
            Metric::Top1 => "top1",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub top1: Option<f64>,
}

impl MetricValues {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Auc => self.auc,
            Metric::F1 => self.f1,
            Metric::Top1 => self.top1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: ClassId,
    #[serde(flatten)]
    pub metrics: MetricValues,
}

/// One method in one trial. `metrics` averages `per_class` (binary) or is the
/// trial's top-1 accuracy (m-way).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub metrics: MetricValues,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Binary,
    Multiway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolInfo {
    pub kind: ProtocolKind,
    pub k: usize,
    pub m: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub class_ids: Vec<ClassId>,
    pub methods: Vec<Method>,
    /// Binary: test negatives per base class. m-way: test samples per class.
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub method: Method,
    pub trial: usize,
    pub class_id: ClassId,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrPoint {
    pub class_id: ClassId,
    pub sr: f64,
    pub auc_method: f64,
    pub auc_baseline: f64,
    /// `(auc_method − auc_baseline) / auc_baseline`
    pub improvement: f64,
    /// Most similar base classes, descending.
    pub neighbors: Vec<(ClassId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrDiagnostics {
    pub k: usize,
    pub method: Method,
    pub baseline: Method,
    pub points: Vec<SrPoint>,
    pub regression: Option<RegressionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: ProtocolInfo,
    pub per_trial: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    pub roc_curves: Vec<RocCurve>,
    pub sr: Option<SrDiagnostics>,
}

impl EvalReport {
    /// Per-trial values of one method and metric, in trial order.
    pub fn trial_values(&self, method: Method, metric: Metric) -> Vec<f64> {
        self.per_trial
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.metrics.get(metric))
            .collect()
    }

    /// Mean over trials of each class's value.
    pub fn class_means(&self, method: Method, metric: Metric) -> BTreeMap<ClassId, f64> {
        let mut acc: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
        for r in self.per_trial.iter().filter(|r| r.method == method) {
            for c in &r.per_class {
                if let Some(v) = c.metrics.get(metric) {
                    let e = acc.entry(c.class_id).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        acc.into_iter()
            .map(|(id, (s, n))| (id, s / n as f64))
            .collect()
    }

    pub fn aggregate(&self, method: Method, metric: Metric) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.metric == metric)
    }
}

fn aggregate(records: &[TrialRecord], methods: &[Method]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &method in methods {
        for metric in [Metric::Auc, Metric::F1, Metric::Top1] {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.metrics.get(metric))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(Aggregate {
                method,
                metric,
                mean,
                std,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                n,
            });
        }
    }
    out
}

/// Everything learned from the base classes that a novel class draws on.
#[derive(Debug, Clone)]
pub struct TransferContext {
    pub base_means: ClassMeans,
    pub base_weights: BaseWeights,
    pub graph: AnalogyGraph,
    pub model: EmbeddingModel,
}

/// What [`TransferContext::transfer`] produces for one novel class.
#[derive(Debug, Clone)]
pub struct Transferred {
    pub similarity: SimilarityVector,
    pub embedding: NovelEmbedding,
    pub classifier: LinearClassifier,
}

impl TransferContext {
    /// Base classifiers, class means, graph, embedding model and solver cache.
    pub fn train(base: &FeatureSet, lr: &TrainLRConfig, vager: &VagerTrainConfig) -> Result<Self> {
        let base_weights = train_base_classifiers(base, lr)?;
        let base_means = class_means(base)?;
        Self::from_parts(base_means, base_weights, vager)
    }

    pub fn from_parts(
        base_means: ClassMeans,
        base_weights: BaseWeights,
        vager: &VagerTrainConfig,
    ) -> Result<Self> {
        let graph = build_graph(&base_means)?;
        let model = precompute_solver(train_vager(&base_weights, &graph, vager)?)?;
        Ok(Self {
            base_means,
            base_weights,
            graph,
            model,
        })
    }

    pub fn with_model(
        base_means: ClassMeans,
        base_weights: BaseWeights,
        model: EmbeddingModel,
    ) -> Result<Self> {
        let graph = build_graph(&base_means)?;
        if model.class_ids != base_means.class_ids || model.class_ids != base_weights.class_ids {
            return Err(Error::shape(
                "model, means and base weights list different classes",
            ));
        }
        let model = match model.pinv_cache {
            Some(_) => model,
            None => precompute_solver(model)?,
        };
        Ok(Self {
            base_means,
            base_weights,
            graph,
            model,
        })
    }

    /// Transferred classifier for a novel class seen through `samples`.
    pub fn transfer(&self, class_id: ClassId, samples: &[&Record]) -> Result<Transferred> {
        if samples.is_empty() {
            return Err(Error::invalid("transfer needs at least one sample"));
        }
        let mean = mean_vector(samples);
        self.transfer_mean(class_id, &mean)
    }

    pub fn transfer_mean(&self, class_id: ClassId, mean: &DVector<f64>) -> Result<Transferred> {
        let similarity = novel_similarity(&self.base_means, mean)?;
        let embedding = infer_embedding(&self.model, &similarity)?;
        let classifier = transfer_weights(&embedding, &self.model, class_id)?;
        Ok(Transferred {
            similarity,
            embedding,
            classifier,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub lr: TrainLRConfig,
    pub voting_lambda: f64,
    pub tuning_lambda: f64,
    /// Binary protocol: test negatives drawn from each base class.
    pub test_neg_per_class: usize,
    pub f1_threshold: f64,
    /// Keep ROC points of the first trial.
    pub record_roc: bool,
    /// m-way protocol: report micro instead of per-class-averaged top-1.
    pub micro_top1: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            lr: TrainLRConfig::default(),
            voting_lambda: 1.0,
            tuning_lambda: 1.0,
            test_neg_per_class: 5,
            f1_threshold: 0.5,
            record_roc: false,
            micro_top1: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryProtocol {
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Base-class samples used as negatives.
#[derive(Debug, Clone, Copy)]
pub struct NegativePools<'a> {
    /// Source of training negatives.
    pub train: &'a FeatureSet,
    /// Source of test negatives; when `None`, test negatives come from
    /// `train` and are excluded from that trial's training negatives.
    pub test: Option<&'a FeatureSet>,
}

/// k-shot binary protocol: each novel class against base-class negatives.
pub fn run_binary_experiment(
    pools: NegativePools<'_>,
    novel: &FeatureSet,
    ctx: &TransferContext,
    methods: &[Method],
    protocol: BinaryProtocol,
    settings: &ExperimentSettings,
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    if let Some(m) = methods.iter().find(|m| **m == Method::Softmax) {
        return Err(Error::invalid(format!(
            "method {m} applies to the m-way protocol only"
        )));
    }
    if protocol.trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if settings.test_neg_per_class == 0 {
        return Err(Error::invalid("test_neg_per_class must be >= 1"));
    }
    let class_ids = novel.class_ids();
    if class_ids.is_empty() {
        return Err(Error::invalid("no novel classes"));
    }
    for &id in &class_ids {
        if novel.class_size(id) <= protocol.k {
            return Err(Error::invalid(format!(
                "novel class {id} has {} samples, needs more than k = {}",
                novel.class_size(id),
                protocol.k
            )));
        }
    }
    let base_ids = pools.train.class_ids();
    if base_ids.is_empty() {
        return Err(Error::invalid("no base samples for negatives"));
    }

    let trials: Vec<(Vec<TrialRecord>, Vec<RocCurve>)> = (0..protocol.trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed::child(protocol.seed, t as u64);
            let mut per_class: BTreeMap<Method, Vec<ClassMetrics>> = BTreeMap::new();
            let mut rocs = Vec::new();
            for (ci, &id) in class_ids.iter().enumerate() {
                let class_seed = seed::child(trial_seed, ci as u64);
                let outcomes = binary_class_trial(
                    pools, &base_ids, novel, ctx, methods, id, protocol.k, class_seed, settings,
                )?;
                for (method, metrics, roc) in outcomes {
                    per_class.entry(method).or_default().push(ClassMetrics {
                        class_id: id,
                        metrics,
                    });
                    if let (Some(points), true) = (roc, t == 0) {
                        rocs.push(RocCurve {
                            method,
                            trial: t,
                            class_id: id,
                            points,
                        });
                    }
                }
            }
            let records = methods
                .iter()
                .map(|m| {
                    let cls = per_class.remove(m).unwrap_or_default();
                    let mean = |f: fn(&MetricValues) -> Option<f64>| {
                        let v: Vec<f64> = cls.iter().filter_map(|c| f(&c.metrics)).collect();
                        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                    };
                    TrialRecord {
                        trial: t,
                        seed: trial_seed,
                        method: *m,
                        metrics: MetricValues {
                            auc: mean(|m| m.auc),
                            f1: mean(|m| m.f1),
                            top1: None,
                        },
                        per_class: cls,
                    }
                })
                .collect::<Vec<_>>();
            Ok((records, rocs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, rocs): (Vec<_>, Vec<_>) = trials.into_iter().unzip();
    let per_trial: Vec<TrialRecord> = records.into_iter().flatten().collect();
    let roc_curves: Vec<RocCurve> = rocs.into_iter().flatten().collect();

    Ok(EvalReport {
        protocol: ProtocolInfo {
            kind: ProtocolKind::Binary,
            k: protocol.k,
            m: None,
            trials: protocol.trials,
            seed: protocol.seed,
            class_ids,
            methods: methods.to_vec(),
            test_per_class: settings.test_neg_per_class,
        },
        aggregates: aggregate(&per_trial, methods),
        per_trial,
        roc_curves,
        sr: None,
    })
}

type Outcome = (Method, MetricValues, Option<Vec<(f64, f64)>>);

#[allow(clippy::too_many_arguments)]
fn binary_class_trial(
    pools: NegativePools<'_>,
    base_ids: &[ClassId],
    novel: &FeatureSet,
    ctx: &TransferContext,
    methods: &[Method],
    class_id: ClassId,
    k: usize,
    class_seed: u64,
    settings: &ExperimentSettings,
) -> Result<Vec<Outcome>> {
    let (train, test) = split_kshot(novel, class_id, k, seed::child(class_seed, tag::SPLIT))?;

    // test negatives: a fixed number per base class
    let mut rng = seed::rng(seed::child(class_seed, tag::TEST_NEG));
    let source = pools.test.unwrap_or(pools.train);
    let mut test_neg: Vec<&[f64]> = Vec::new();
    let mut excluded: HashSet<(ClassId, u64)> = HashSet::new();
    for id in source.class_ids() {
        let members = source.class_records(id);
        for r in sample_without_replacement(&members, settings.test_neg_per_class, &mut rng) {
            test_neg.push(&r.x);
            if pools.test.is_none() {
                excluded.insert((r.class_id, r.sample_id));
            }
        }
    }
    debug_assert!(!base_ids.is_empty());

    let pool: Vec<&[f64]> = pools
        .train
        .records()
        .iter()
        .filter(|r| !excluded.contains(&(r.class_id, r.sample_id)))
        .map(|r| r.x.as_slice())
        .collect();
    let mut rng = seed::rng(seed::child(class_seed, tag::TRAIN_NEG));
    let train_neg = sample_without_replacement(&pool, settings.lr.neg_per_pos * k, &mut rng);
    if train_neg.is_empty() {
        return Err(Error::invalid(
            "no training negatives left after holding out test negatives",
        ));
    }
    let pos: Vec<&[f64]> = train.records().iter().map(|r| r.x.as_slice()).collect();
    let test_pos: Vec<&[f64]> = test.records().iter().map(|r| r.x.as_slice()).collect();

    let lr_cfg = TrainLRConfig {
        seed: seed::child(class_seed, tag::LR),
        ..settings.lr.clone()
    };
    let train_refs: Vec<&Record> = train.records().iter().collect();
    let needs_transfer = methods.iter().any(|m| {
        matches!(
            m,
            Method::Vager | Method::VagerInitializing | Method::VagerTuning | Method::VagerVoting
        )
    });
    let transferred = if needs_transfer {
        Some(ctx.transfer(class_id, &train_refs)?.classifier)
    } else {
        None
    };
    let mut model: Option<LinearClassifier> = None;
    let mut lr_model = || -> Result<LinearClassifier> {
        if model.is_none() {
            model = Some(train_logistic(class_id, &pos, &train_neg, &lr_cfg, None)?);
        }
        Ok(model.clone().expect("trained"))
    };

    let mut out = Vec::with_capacity(methods.len());
    let mut chance_rng = seed::rng(seed::child(class_seed, tag::CHANCE));
    for &method in methods {
        let trans = || transferred.clone().expect("transfer computed");
        let (pos_scores, neg_scores): (Vec<f64>, Vec<f64>) = match method {
            Method::Oracle => (vec![1.0; test_pos.len()], vec![0.0; test_neg.len()]),
            Method::Chance => (
                (0..test_pos.len())
                    .map(|_| chance_rng.random::<f64>())
                    .collect(),
                (0..test_neg.len())
                    .map(|_| chance_rng.random::<f64>())
                    .collect(),
            ),
            _ => {
                let clf = match method {
                    Method::Vager => trans(),
                    Method::VagerInitializing => {
                        fuse_initializing(&trans(), &pos, &train_neg, &lr_cfg)?
                    }
                    Method::VagerTuning => {
                        fuse_tuning(&trans(), &pos, &train_neg, settings.tuning_lambda, &lr_cfg)?
                    }
                    Method::VagerVoting => {
                        fuse_voting(&trans(), &lr_model()?, settings.voting_lambda)?
                    }
                    Method::Lr => lr_model()?,
                    Method::WeightedLr => {
                        let mean = mean_vector(&train_refs);
                        weighted_lr_baseline(&ctx.base_weights, &ctx.base_means, &mean, class_id)?
                    }
                    Method::Softmax | Method::Oracle | Method::Chance => unreachable!(),
                };
                (clf.predict_batch(&test_pos)?, clf.predict_batch(&test_neg)?)
            }
        };
        let auc = roc_auc(&pos_scores, &neg_scores)?;
        let mut scores = pos_scores.clone();
        scores.extend_from_slice(&neg_scores);
        let labels: Vec<bool> = (0..scores.len()).map(|i| i < pos_scores.len()).collect();
        let f1 = f1_score(&scores, &labels, settings.f1_threshold)?;
        let roc = if settings.record_roc {
            Some(roc_curve(&pos_scores, &neg_scores)?)
        } else {
            None
        };
        out.push((
            method,
            MetricValues {
                auc: Some(auc),
                f1: Some(f1),
                top1: None,
            },
            roc,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiwayProtocol {
    pub m: usize,
    pub k: usize,
    pub trials: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// m-way k-shot protocol: one-vs-rest classifiers over `m` sampled novel
/// classes, decided by the largest logit.
pub fn run_multiway_experiment(
    novel: &FeatureSet,
    ctx: &TransferContext,
    methods: &[Method],
    protocol: MultiwayProtocol,
    settings: &ExperimentSettings,
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    if protocol.trials == 0 || protocol.test_per_class == 0 || protocol.k == 0 {
        return Err(Error::invalid("trials, k and test_per_class must be >= 1"));
    }
    let all_ids = novel.class_ids();
    if protocol.m < 2 || protocol.m > all_ids.len() {
        return Err(Error::invalid(format!(
            "m = {} needs 2 <= m <= {} novel classes",
            protocol.m,
            all_ids.len()
        )));
    }
    for &id in &all_ids {
        let size = novel.class_size(id);
        if size < protocol.k + protocol.test_per_class {
            return Err(Error::invalid(format!(
                "novel class {id} has {size} samples, needs k + test_per_class = {}",
                protocol.k + protocol.test_per_class
            )));
        }
    }

    let trials: Vec<Vec<TrialRecord>> = (0..protocol.trials)
        .into_par_iter()
        .map(|t| multiway_trial(novel, ctx, methods, &all_ids, protocol, settings, t))
        .collect::<Result<Vec<_>>>()?;
    let per_trial: Vec<TrialRecord> = trials.into_iter().flatten().collect();
    Ok(EvalReport {
        protocol: ProtocolInfo {
            kind: ProtocolKind::Multiway,
            k: protocol.k,
            m: Some(protocol.m),
            trials: protocol.trials,
            seed: protocol.seed,
            class_ids: all_ids,
            methods: methods.to_vec(),
            test_per_class: protocol.test_per_class,
        },
        aggregates: aggregate(&per_trial, methods),
        per_trial,
        roc_curves: Vec::new(),
        sr: None,
    })
}

fn multiway_trial(
    novel: &FeatureSet,
    ctx: &TransferContext,
    methods: &[Method],
    all_ids: &[ClassId],
    protocol: MultiwayProtocol,
    settings: &ExperimentSettings,
    t: usize,
) -> Result<Vec<TrialRecord>> {
    let trial_seed = seed::child(protocol.seed, t as u64);
    let mut chosen: Vec<usize> = if protocol.m == all_ids.len() {
        (0..all_ids.len()).collect()
    } else {
        let mut rng = seed::rng(seed::child(trial_seed, tag::CLASSES));
        index::sample(&mut rng, all_ids.len(), protocol.m).into_vec()
    };
    chosen.sort_unstable();

    let mut train_sets = Vec::with_capacity(chosen.len());
    let mut tests: Vec<(ClassId, Vec<f64>)> = Vec::new();
    for &ci in &chosen {
        let id = all_ids[ci];
        let class_seed = seed::child(trial_seed, ci as u64);
        let (train, rest) =
            split_kshot(novel, id, protocol.k, seed::child(class_seed, tag::SPLIT))?;
        for r in rest.records().iter().take(protocol.test_per_class) {
            tests.push((id, r.x.clone()));
        }
        train_sets.push((id, class_seed, train));
    }
    let truths: Vec<ClassId> = tests.iter().map(|(id, _)| *id).collect();

    let mut lr_cache: Option<Vec<LinearClassifier>> = None;
    let mut transfer_cache: Option<Vec<LinearClassifier>> = None;
    let mut records = Vec::with_capacity(methods.len());
    for &method in methods {
        let predictions: Vec<ClassId> = match method {
            Method::Oracle => truths.clone(),
            Method::Chance => {
                let mut rng = seed::rng(seed::child(trial_seed, tag::CHANCE));
                (0..tests.len())
                    .map(|_| train_sets[rng.random_range(0..train_sets.len())].0)
                    .collect()
            }
            _ => {
                let classifiers = multiway_classifiers(
                    method,
                    ctx,
                    &train_sets,
                    settings,
                    &mut lr_cache,
                    &mut transfer_cache,
                    trial_seed,
                )?;
                tests
                    .iter()
                    .map(|(_, x)| multiclass_decide(&classifiers, x))
                    .collect::<Result<_>>()?
            }
        };
        let top1 = if settings.micro_top1 {
            top1_micro(&predictions, &truths)?
        } else {
            top1_accuracy(&predictions, &truths)?
        };
        let per_class = top1_per_class(&predictions, &truths)?
            .into_iter()
            .map(|(class_id, acc)| ClassMetrics {
                class_id,
                metrics: MetricValues {
                    top1: Some(acc),
                    ..Default::default()
                },
            })
            .collect();
        records.push(TrialRecord {
            trial: t,
            seed: trial_seed,
            method,
            metrics: MetricValues {
                top1: Some(top1),
                ..Default::default()
            },
            per_class,
        });
    }
    Ok(records)
}

fn multiway_classifiers(
    method: Method,
    ctx: &TransferContext,
    train_sets: &[(ClassId, u64, FeatureSet)],
    settings: &ExperimentSettings,
    lr_cache: &mut Option<Vec<LinearClassifier>>,
    transfer_cache: &mut Option<Vec<LinearClassifier>>,
    trial_seed: u64,
) -> Result<Vec<LinearClassifier>> {
    let samples = |i: usize| -> Vec<&[f64]> {
        train_sets[i]
            .2
            .records()
            .iter()
            .map(|r| r.x.as_slice())
            .collect()
    };
    let others = |i: usize| -> Vec<&[f64]> {
        train_sets
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, (_, _, fs))| fs.records().iter().map(|r| r.x.as_slice()))
            .collect()
    };
    let cfg_for = |i: usize| TrainLRConfig {
        seed: seed::child(train_sets[i].1, tag::LR),
        ..settings.lr.clone()
    };
    let m = train_sets.len();

    if transfer_cache.is_none()
        && matches!(
            method,
            Method::Vager | Method::VagerInitializing | Method::VagerTuning | Method::VagerVoting
        )
    {
        *transfer_cache = Some(
            train_sets
                .iter()
                .map(|(id, _, fs)| {
                    let refs: Vec<&Record> = fs.records().iter().collect();
                    ctx.transfer(*id, &refs).map(|t| t.classifier)
                })
                .collect::<Result<_>>()?,
        );
    }
    if lr_cache.is_none() && matches!(method, Method::Lr | Method::VagerVoting) {
        *lr_cache = Some(
            (0..m)
                .map(|i| {
                    train_logistic(train_sets[i].0, &samples(i), &others(i), &cfg_for(i), None)
                })
                .collect::<Result<_>>()?,
        );
    }
    let trans = || transfer_cache.as_ref().expect("transfer computed");
    match method {
        Method::Vager => Ok(trans().clone()),
        Method::Lr => Ok(lr_cache.clone().expect("lr computed")),
        Method::VagerVoting => trans()
            .iter()
            .zip(lr_cache.as_ref().expect("lr computed"))
            .map(|(t, l)| fuse_voting(t, l, settings.voting_lambda))
            .collect(),
        Method::VagerInitializing => (0..m)
            .map(|i| fuse_initializing(&trans()[i], &samples(i), &others(i), &cfg_for(i)))
            .collect(),
        Method::VagerTuning => (0..m)
            .map(|i| {
                fuse_tuning(
                    &trans()[i],
                    &samples(i),
                    &others(i),
                    settings.tuning_lambda,
                    &cfg_for(i),
                )
            })
            .collect(),
        Method::WeightedLr => train_sets
            .iter()
            .map(|(id, _, fs)| {
                let refs: Vec<&Record> = fs.records().iter().collect();
                weighted_lr_baseline(&ctx.base_weights, &ctx.base_means, &mean_vector(&refs), *id)
            })
            .collect(),
        Method::Softmax => {
            let classes: Vec<(ClassId, Vec<&[f64]>)> =
                (0..m).map(|i| (train_sets[i].0, samples(i))).collect();
            let cfg = TrainLRConfig {
                seed: seed::child(trial_seed, tag::LR),
                ..settings.lr.clone()
            };
            train_softmax(&classes, &cfg)
        }
        Method::Oracle | Method::Chance => unreachable!("handled by the caller"),
    }
}

/// Similarity ratio of every novel class (from its full sample mean) against
/// the per-class relative AUC improvement of `method` over `baseline` in a
/// binary report, with the least-squares fit when it is defined.
pub fn sr_analysis(
    report: &EvalReport,
    ctx: &TransferContext,
    novel: &FeatureSet,
    k: usize,
    method: Method,
    baseline: Method,
) -> Result<SrDiagnostics> {
    let improved = report.class_means(method, Metric::Auc);
    let base = report.class_means(baseline, Metric::Auc);
    if improved.is_empty() || base.is_empty() {
        return Err(Error::invalid(format!(
            "report lacks AUC values for {method} or {baseline}"
        )));
    }
    let mut points = Vec::new();
    for (id, auc_method) in &improved {
        let Some(&auc_baseline) = base.get(id) else {
            continue;
        };
        let refs: Vec<&Record> = novel.class_records(*id);
        if refs.is_empty() {
            continue;
        }
        let a = novel_similarity(&ctx.base_means, &mean_vector(&refs))?;
        points.push(SrPoint {
            class_id: *id,
            sr: similarity_ratio(&a, k.min(a.len()))?,
            auc_method: *auc_method,
            auc_baseline,
            improvement: (auc_method - auc_baseline) / auc_baseline,
            neighbors: top_k_neighbors(&a, 3.min(a.len()))?,
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.sr, p.improvement)).collect();
    let regression = if xy.len() >= 3 {
        sr_improvement_regression(&xy).ok()
    } else {
        None
    };
    Ok(SrDiagnostics {
        k,
        method,
        baseline,
        points,
        regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!("svm".parse::<Method>().is_err());
        assert_eq!(
            Method::parse_list("lr, vager+voting,lr").unwrap(),
            vec![Method::Lr, Method::VagerVoting]
        );
    }
}
