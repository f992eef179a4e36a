//! Linear classifiers: logistic training, fusion with transferred weights,
//! the similarity-weighted baseline, and one-vs-rest decisions.
//!
//! Every weight vector has `p = d + 1` entries; the last multiplies a constant
//! 1 appended to the features.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassMeans, FeatureSet};
use crate::graph::{novel_similarity, top_k_neighbors};
use crate::seed::{self, tag};
use crate::vager::BaseWeights;
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Base,
    Transferred,
    Model,
    Fused,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Base => 0,
            Provenance::Transferred => 1,
            Provenance::Model => 2,
            Provenance::Fused => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Provenance::Base,
            1 => Provenance::Transferred,
            2 => Provenance::Model,
            3 => Provenance::Fused,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub class_id: ClassId,
    pub provenance: Provenance,
    pub w: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(class_id: ClassId, provenance: Provenance, w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::shape(
                "weight vector needs at least one feature and a bias",
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "classifier for class {class_id} has non-finite weights"
            )));
        }
        Ok(Self {
            class_id,
            provenance,
            w,
        })
    }

    /// Feature dimension `d = p − 1`.
    pub fn d(&self) -> usize {
        self.w.len() - 1
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d() {
            return Err(Error::shape(format!(
                "classifier expects {} features, got {}",
                self.d(),
                x.len()
            )));
        }
        Ok(augmented_dot(&self.w, x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }

    /// Probabilities for many samples, evaluated in parallel, in input order.
    pub fn predict_batch(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

pub fn predict(c: &LinearClassifier, x: &[f64]) -> Result<f64> {
    c.predict(x)
}

/// `w · [x; 1]`
fn augmented_dot(w: &[f64], x: &[f64]) -> f64 {
    let (bias, head) = w.split_last().expect("non-empty weights");
    head.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLRConfig {
    /// L2 coefficient.
    pub lambda_reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Step at epoch `e` (0-based) is `step_size / sqrt(e + 1)`.
    pub step_size: f64,
    pub seed: u64,
    /// Negatives drawn per positive, capped by the pool.
    pub neg_per_pos: usize,
    /// Replace minibatch SGD with full-batch gradient descent and a halving
    /// line search; the objective then never increases.
    #[serde(default)]
    pub backtracking: bool,
}

impl Default for TrainLRConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-3,
            epochs: 200,
            batch_size: 32,
            step_size: 0.1,
            seed: 0,
            neg_per_pos: 20,
            backtracking: false,
        }
    }
}

impl TrainLRConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.neg_per_pos == 0 {
            return Err(Error::invalid("batch_size and neg_per_pos must be >= 1"));
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(Error::invalid("lambda_reg must be >= 0"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be > 0"));
        }
        Ok(())
    }
}

/// Regularized cross-entropy over a labeled sample:
/// `Σ_i CE(σ(w·[x_i;1]), y_i) + λ ‖w − anchor‖²`, anchor zero unless given.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    xs: Vec<&'a [f64]>,
    ys: Vec<f64>,
    lambda: f64,
    anchor: Option<&'a [f64]>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(
        pos: &[&'a [f64]],
        neg: &[&'a [f64]],
        lambda: f64,
        anchor: Option<&'a [f64]>,
    ) -> Result<Self> {
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::invalid(
                "logistic training needs at least one positive and one negative sample",
            ));
        }
        let d = pos[0].len();
        if pos.iter().chain(neg).any(|x| x.len() != d) {
            return Err(Error::shape("training samples differ in dimension"));
        }
        if let Some(a) = anchor {
            if a.len() != d + 1 {
                return Err(Error::shape(format!(
                    "anchor has {} entries, expected {}",
                    a.len(),
                    d + 1
                )));
            }
        }
        let xs: Vec<&[f64]> = pos.iter().chain(neg).copied().collect();
        let ys = std::iter::repeat_n(1.0, pos.len())
            .chain(std::iter::repeat_n(0.0, neg.len()))
            .collect();
        Ok(Self {
            xs,
            ys,
            lambda,
            anchor,
        })
    }

    pub fn p(&self) -> usize {
        self.xs[0].len() + 1
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        match self.anchor {
            Some(a) => w.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum(),
            None => w.iter().map(|x| x * x).sum(),
        }
    }

    pub fn cross_entropy(&self, w: &[f64]) -> f64 {
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| {
                let z = augmented_dot(w, x);
                softplus(z) - y * z
            })
            .sum()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.cross_entropy(w) + self.lambda * self.penalty(w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        self.accumulate_ce_gradient(w, 0..self.xs.len(), &mut g);
        let anchor = self.anchor;
        for (j, gj) in g.iter_mut().enumerate() {
            let a = anchor.map_or(0.0, |a| a[j]);
            *gj += 2.0 * self.lambda * (w[j] - a);
        }
        g
    }

    fn accumulate_ce_gradient(
        &self,
        w: &[f64],
        idx: impl IntoIterator<Item = usize>,
        g: &mut [f64],
    ) {
        let d = w.len() - 1;
        for i in idx {
            let x = self.xs[i];
            let r = sigmoid(augmented_dot(w, x)) - self.ys[i];
            for j in 0..d {
                g[j] += r * x[j];
            }
            g[d] += r;
        }
    }

    fn anchor_at(&self, j: usize) -> f64 {
        self.anchor.map_or(0.0, |a| a[j])
    }
}

/// Minimizes a [`LogisticObjective`] from `init` and returns the weights with
/// the objective value recorded after every epoch.
///
/// In SGD mode each minibatch step uses the batch-averaged cross-entropy
/// gradient and applies the L2 term (scaled by `1/N`) as an exact proximal
/// step, which is stable for any `λ` and keeps the minimizer of the summed
/// objective.
pub fn minimize_logistic(
    objective: &LogisticObjective<'_>,
    init: Vec<f64>,
    cfg: &TrainLRConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut w = init;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let n = objective.len();
    let p = objective.p();
    let reg = 2.0 * objective.lambda / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = cfg.step_size;
    let mut current = objective.value(&w);
    for epoch in 0..cfg.epochs {
        if cfg.backtracking {
            let g = objective.gradient(&w);
            let mut trial = 2.0 * step;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = w
                    .iter()
                    .zip(&g)
                    .map(|(x, gj)| x - trial * gj / n as f64)
                    .collect();
                let val = objective.value(&cand);
                if val <= current {
                    w = cand;
                    current = val;
                    step = trial;
                    accepted = true;
                    break;
                }
                trial *= 0.5;
            }
            if !accepted {
                trace.push(current);
                continue;
            }
        } else {
            let eta = cfg.step_size / ((epoch + 1) as f64).sqrt();
            order.shuffle(rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut g = vec![0.0; p];
                objective.accumulate_ce_gradient(&w, batch.iter().copied(), &mut g);
                let scale = 1.0 / batch.len() as f64;
                let shrink = 1.0 + eta * reg;
                for j in 0..p {
                    w[j] =
                        (w[j] - eta * scale * g[j] + eta * reg * objective.anchor_at(j)) / shrink;
                }
            }
            current = objective.value(&w);
        }
        if !current.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "logistic training diverged at epoch {epoch}"
            )));
        }
        trace.push(current);
    }
    Ok((w, trace))
}

fn check_init(init: Option<&[f64]>, p: usize) -> Result<Vec<f64>> {
    match init {
        Some(w) if w.len() != p => Err(Error::shape(format!(
            "initial weights have {} entries, expected {p}",
            w.len()
        ))),
        Some(w) => Ok(w.to_vec()),
        None => Ok(vec![0.0; p]),
    }
}

/// L2-regularized logistic regression by seeded minibatch SGD.
pub fn train_logistic(
    class_id: ClassId,
    pos: &[&[f64]],
    neg: &[&[f64]],
    cfg: &TrainLRConfig,
    init: Option<&[f64]>,
) -> Result<LinearClassifier> {
    train_logistic_traced(class_id, pos, neg, cfg, init).map(|(c, _)| c)
}

pub fn train_logistic_traced(
    class_id: ClassId,
    pos: &[&[f64]],
    neg: &[&[f64]],
    cfg: &TrainLRConfig,
    init: Option<&[f64]>,
) -> Result<(LinearClassifier, Vec<f64>)> {
    cfg.validate()?;
    let objective = LogisticObjective::new(pos, neg, cfg.lambda_reg, None)?;
    let init = check_init(init, objective.p())?;
    let mut rng = seed::rng(seed::child(cfg.seed, tag::LR));
    let (w, trace) = minimize_logistic(&objective, init, cfg, &mut rng)?;
    Ok((
        LinearClassifier::new(class_id, Provenance::Model, w)?,
        trace,
    ))
}

/// Uniform draw without replacement of `min(count, pool.len())` items, in draw order.
pub fn sample_without_replacement<'a, T: ?Sized>(
    pool: &[&'a T],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a T> {
    let count = count.min(pool.len());
    index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

impl BaseWeights {
    /// Stacks classifiers sorted by ascending, distinct class id.
    pub fn from_classifiers(classifiers: &[LinearClassifier]) -> Result<Self> {
        let Some(first) = classifiers.first() else {
            return Err(Error::invalid("no base classifiers"));
        };
        if classifiers
            .windows(2)
            .any(|w| w[0].class_id >= w[1].class_id)
        {
            return Err(Error::invalid(
                "base classifiers must be sorted by class id without repeats",
            ));
        }
        if classifiers.iter().any(|c| c.p() != first.p()) {
            return Err(Error::shape("base classifiers differ in dimension"));
        }
        let data: Vec<f64> = classifiers
            .iter()
            .flat_map(|c| c.w.iter().copied())
            .collect();
        Ok(Self {
            class_ids: classifiers.iter().map(|c| c.class_id).collect(),
            w: DMatrix::from_row_slice(classifiers.len(), first.p(), &data),
        })
    }

    pub fn to_classifiers(&self) -> Result<Vec<LinearClassifier>> {
        self.class_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                LinearClassifier::new(
                    *id,
                    Provenance::Base,
                    self.w.row(i).iter().copied().collect(),
                )
            })
            .collect()
    }
}

/// One-vs-rest logistic classifier per base class, rows in ascending class id order.
pub fn train_base_classifiers(base: &FeatureSet, cfg: &TrainLRConfig) -> Result<BaseWeights> {
    cfg.validate()?;
    let ids = base.class_ids();
    if ids.len() < 2 {
        return Err(Error::invalid("need at least two base classes"));
    }
    let rows = ids
        .par_iter()
        .enumerate()
        .map(|(i, &id)| {
            let pos: Vec<&[f64]> = base
                .records()
                .iter()
                .filter(|r| r.class_id == id)
                .map(|r| r.x.as_slice())
                .collect();
            let pool: Vec<&[f64]> = base
                .records()
                .iter()
                .filter(|r| r.class_id != id)
                .map(|r| r.x.as_slice())
                .collect();
            let class_seed = seed::child(cfg.seed, i as u64);
            let mut rng = seed::rng(seed::child(class_seed, tag::TRAIN_NEG));
            let neg = sample_without_replacement(&pool, cfg.neg_per_pos * pos.len(), &mut rng);
            let class_cfg = TrainLRConfig {
                seed: class_seed,
                ..cfg.clone()
            };
            train_logistic(id, &pos, &neg, &class_cfg, None).map(|c| c.w)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = base.d() + 1;
    let w = nalgebra::DMatrix::from_fn(ids.len(), p, |i, j| rows[i][j]);
    Ok(BaseWeights { class_ids: ids, w })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    Initializing,
    Tuning,
    Voting,
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initializing" => Ok(Self::Initializing),
            "tuning" => Ok(Self::Tuning),
            "voting" => Ok(Self::Voting),
            other => Err(Error::invalid(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    /// Tuning: weight of `‖w − w_trans‖²`. Voting: weight of `w_model`.
    /// Initializing: unused (the L2 coefficient comes from `lr_cfg`).
    pub lambda: f64,
    pub lr_cfg: TrainLRConfig,
}

impl FusionConfig {
    pub fn new(strategy: FusionStrategy, lambda: f64, lr_cfg: TrainLRConfig) -> Self {
        Self {
            strategy,
            lambda,
            lr_cfg,
        }
    }
}

/// Fine-tunes from the transferred weights.
pub fn fuse_initializing(
    w_trans: &LinearClassifier,
    pos: &[&[f64]],
    neg: &[&[f64]],
    cfg: &TrainLRConfig,
) -> Result<LinearClassifier> {
    let mut c = train_logistic(w_trans.class_id, pos, neg, cfg, Some(&w_trans.w))?;
    c.provenance = Provenance::Fused;
    Ok(c)
}

/// Trains from a small seeded random start with `λ ‖w − w_trans‖²` in place
/// of the usual L2 term.
pub fn fuse_tuning(
    w_trans: &LinearClassifier,
    pos: &[&[f64]],
    neg: &[&[f64]],
    lambda: f64,
    cfg: &TrainLRConfig,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("tuning lambda must be >= 0"));
    }
    let objective = LogisticObjective::new(pos, neg, lambda, Some(&w_trans.w))?;
    if objective.p() != w_trans.p() {
        return Err(Error::shape(
            "transferred weights do not match the feature dimension",
        ));
    }
    let mut rng = seed::rng(seed::child(cfg.seed, tag::TUNE));
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let init: Vec<f64> = (0..objective.p())
        .map(|_| normal.sample(&mut rng))
        .collect();
    let (w, _) = minimize_logistic(&objective, init, cfg, &mut rng)?;
    LinearClassifier::new(w_trans.class_id, Provenance::Fused, w)
}

/// `w_trans + λ · w_model`.
pub fn fuse_voting(
    w_trans: &LinearClassifier,
    w_model: &LinearClassifier,
    lambda: f64,
) -> Result<LinearClassifier> {
    if w_trans.p() != w_model.p() {
        return Err(Error::shape(format!(
            "cannot vote between {} and {} parameters",
            w_trans.p(),
            w_model.p()
        )));
    }
    let w = w_trans
        .w
        .iter()
        .zip(&w_model.w)
        .map(|(t, m)| t + lambda * m)
        .collect();
    LinearClassifier::new(w_trans.class_id, Provenance::Fused, w)
}

/// Runs the configured strategy; Voting trains `w_model` with `cfg.lr_cfg`.
pub fn fuse(
    w_trans: &LinearClassifier,
    pos: &[&[f64]],
    neg: &[&[f64]],
    cfg: &FusionConfig,
) -> Result<LinearClassifier> {
    match cfg.strategy {
        FusionStrategy::Initializing => fuse_initializing(w_trans, pos, neg, &cfg.lr_cfg),
        FusionStrategy::Tuning => fuse_tuning(w_trans, pos, neg, cfg.lambda, &cfg.lr_cfg),
        FusionStrategy::Voting => {
            let model = train_logistic(w_trans.class_id, pos, neg, &cfg.lr_cfg, None)?;
            fuse_voting(w_trans, &model, cfg.lambda)
        }
    }
}

/// Number of neighbors used by [`weighted_lr_baseline`].
pub const WEIGHTED_LR_NEIGHBORS: usize = 10;

/// Similarity-weighted sum of the base weights of the 10 base classes most
/// similar to `novel_mean`, the similarities divided by their L2 norm.
pub fn weighted_lr_baseline(
    weights: &BaseWeights,
    means: &ClassMeans,
    novel_mean: &DVector<f64>,
    class_id: ClassId,
) -> Result<LinearClassifier> {
    weighted_lr_baseline_top(weights, means, novel_mean, class_id, WEIGHTED_LR_NEIGHBORS)
}

pub fn weighted_lr_baseline_top(
    weights: &BaseWeights,
    means: &ClassMeans,
    novel_mean: &DVector<f64>,
    class_id: ClassId,
    neighbors: usize,
) -> Result<LinearClassifier> {
    if weights.class_ids != means.class_ids {
        return Err(Error::shape(
            "base weights and class means list different classes",
        ));
    }
    let a = novel_similarity(means, novel_mean)?;
    let top = top_k_neighbors(&a, neighbors.min(a.len()))?;
    let norm = top.iter().map(|(_, s)| s * s).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numerical(
            "novel class is orthogonal to every selected base class".into(),
        ));
    }
    let mut w = vec![0.0; weights.p()];
    for (id, s) in &top {
        let row = weights
            .class_ids
            .binary_search(id)
            .map_err(|_| Error::invalid(format!("class {id} missing from base weights")))?;
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += s / norm * weights.w[(row, j)];
        }
    }
    LinearClassifier::new(class_id, Provenance::Transferred, w)
}

/// Class with the largest logit; ties go to the smaller class id.
pub fn multiclass_decide(classifiers: &[LinearClassifier], x: &[f64]) -> Result<ClassId> {
    if classifiers.len() < 2 {
        return Err(Error::invalid("need at least two classifiers to decide"));
    }
    let mut best: Option<(f64, ClassId)> = None;
    for c in classifiers {
        let z = c.logit(x)?;
        best = match best {
            Some((bz, bid)) if bz > z || (bz == z && bid < c.class_id) => Some((bz, bid)),
            _ => Some((z, c.class_id)),
        };
    }
    Ok(best.expect("non-empty").1)
}

/// Multinomial logistic (softmax) regression over `classes`, returned as one
/// weight vector per class in input order. Same SGD schedule and proximal L2
/// step as [`train_logistic`].
pub fn train_softmax(
    classes: &[(ClassId, Vec<&[f64]>)],
    cfg: &TrainLRConfig,
) -> Result<Vec<LinearClassifier>> {
    cfg.validate()?;
    if classes.len() < 2 || classes.iter().any(|(_, xs)| xs.is_empty()) {
        return Err(Error::invalid(
            "softmax needs at least two non-empty classes",
        ));
    }
    let d = classes[0].1[0].len();
    if classes.iter().flat_map(|(_, xs)| xs).any(|x| x.len() != d) {
        return Err(Error::shape("training samples differ in dimension"));
    }
    let m = classes.len();
    let p = d + 1;
    let samples: Vec<(usize, &[f64])> = classes
        .iter()
        .enumerate()
        .flat_map(|(c, (_, xs))| xs.iter().map(move |x| (c, *x)))
        .collect();
    let n = samples.len();
    let reg = 2.0 * cfg.lambda_reg / n as f64;
    let mut w = vec![vec![0.0; p]; m];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::child(cfg.seed, tag::LR));
    let mut logits = vec![0.0; m];
    for epoch in 0..cfg.epochs {
        let eta = cfg.step_size / ((epoch + 1) as f64).sqrt();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = vec![vec![0.0; p]; m];
            for &i in batch {
                let (label, x) = samples[i];
                for (c, z) in logits.iter_mut().enumerate() {
                    *z = augmented_dot(&w[c], x);
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
                for c in 0..m {
                    let r = (logits[c] - max).exp() / total - if c == label { 1.0 } else { 0.0 };
                    for j in 0..d {
                        g[c][j] += r * x[j];
                    }
                    g[c][d] += r;
                }
            }
            let scale = eta / batch.len() as f64;
            let shrink = 1.0 + eta * reg;
            for c in 0..m {
                for j in 0..p {
                    w[c][j] = (w[c][j] - scale * g[c][j]) / shrink;
                }
            }
        }
        if w.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "softmax training diverged at epoch {epoch}"
            )));
        }
    }
    classes
        .iter()
        .zip(w)
        .map(|((id, _), w)| LinearClassifier::new(*id, Provenance::Model, w))
        .collect()
}
