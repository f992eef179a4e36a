//! Joint embedding of the analogy graph and the base classifier weights.
//!
//! Base classes get embeddings `V` (n x q) and share a map `T` (q x p) so that
//! `V T` reconstructs the base weights `W` while `V Vᵀ` reconstructs the
//! adjacency `A`:
//!
//! ```text
//! L(V, T) = ‖V T − W‖²_F + β ‖A − V Vᵀ‖²_F
//! ∂L/∂V   = 2 (V T − W) Tᵀ + β (−4 A V + 4 V Vᵀ V)
//! ∂L/∂T   = 2 Vᵀ (V T − W)
//! ```
//!
//! [`train_vager`] minimizes `L` by alternating full-batch gradient steps on
//! each block with a halving line search, so the loss never increases.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::AnalogyGraph;
use crate::transfer::PinvCache;
use crate::{seed, ClassId, Error, Result};

/// Base classifier parameters, one row per base class (bias last).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub class_ids: Vec<ClassId>,
    pub w: DMatrix<f64>,
}

impl BaseWeights {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VagerTrainConfig {
    pub q: usize,
    pub beta: f64,
    pub max_outer_iters: usize,
    pub inner_steps_v: usize,
    pub inner_steps_t: usize,
    /// Initial trial step; halved on every rejected step.
    pub step_size: f64,
    pub rel_tol: f64,
    pub init_scale: f64,
    pub seed: u64,
}

/// Largest embedding dimension picked by [`VagerTrainConfig::for_classes`].
pub const DEFAULT_MAX_Q: usize = 32;

impl VagerTrainConfig {
    /// Defaults for `n` base classes with `p` weight coordinates:
    /// `q = min(n − 1, p, 32)`, `β = 1`.
    pub fn for_classes(n: usize, p: usize, seed: u64) -> Self {
        Self {
            q: n.saturating_sub(1).min(p).clamp(1, DEFAULT_MAX_Q),
            beta: 1.0,
            max_outer_iters: 500,
            inner_steps_v: 5,
            inner_steps_t: 5,
            step_size: 0.01,
            rel_tol: 1e-6,
            init_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0
            || self.max_outer_iters == 0
            || self.inner_steps_v == 0
            || self.inner_steps_t == 0
        {
            return Err(Error::invalid("q and all iteration counts must be >= 1"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.beta)
            || !positive(self.step_size)
            || !positive(self.rel_tol)
            || !positive(self.init_scale)
        {
            return Err(Error::invalid(
                "beta, step_size, rel_tol and init_scale must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub final_loss: f64,
    pub outer_iterations: usize,
    /// Loss at initialization followed by the loss after each outer iteration.
    pub loss_trace: Vec<f64>,
}

/// Learned embeddings and map, together with the graph and weights they fit.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub class_ids: Vec<ClassId>,
    /// n x q
    pub v: DMatrix<f64>,
    /// q x p
    pub t: DMatrix<f64>,
    pub beta: f64,
    /// The adjacency matrix the model was trained against.
    pub adjacency: DMatrix<f64>,
    /// The base weights the model was trained against.
    pub weights: DMatrix<f64>,
    pub stats: TrainingStats,
    pub pinv_cache: Option<PinvCache>,
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        self.class_ids == other.class_ids
            && self.v == other.v
            && self.t == other.t
            && self.beta.to_bits() == other.beta.to_bits()
            && self.adjacency == other.adjacency
            && self.weights == other.weights
            && self.stats == other.stats
    }
}

impl EmbeddingModel {
    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn q(&self) -> usize {
        self.v.ncols()
    }

    pub fn p(&self) -> usize {
        self.t.ncols()
    }

    /// Loss of the stored factors against the stored graph and weights.
    pub fn recompute_loss(&self) -> Result<f64> {
        vager_loss(&self.v, &self.t, &self.weights, &self.adjacency, self.beta)
    }
}

fn check_shapes(
    v: &DMatrix<f64>,
    t: &DMatrix<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<()> {
    let (n, q) = v.shape();
    let p = w.ncols();
    if t.shape() != (q, p) || w.nrows() != n || a.shape() != (n, n) {
        return Err(Error::shape(format!(
            "V {:?}, T {:?}, W {:?}, A {:?} do not conform",
            v.shape(),
            t.shape(),
            w.shape(),
            a.shape()
        )));
    }
    Ok(())
}

pub fn vager_loss(
    v: &DMatrix<f64>,
    t: &DMatrix<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    check_shapes(v, t, w, a)?;
    Ok(loss_unchecked(v, t, w, a, beta))
}

fn loss_unchecked(
    v: &DMatrix<f64>,
    t: &DMatrix<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    let fit = (v * t - w).norm_squared();
    if beta == 0.0 {
        return fit;
    }
    fit + beta * (a - v * v.transpose()).norm_squared()
}

/// `(∂L/∂V, ∂L/∂T)`; `A` is assumed symmetric.
pub fn vager_gradients(
    v: &DMatrix<f64>,
    t: &DMatrix<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    beta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shapes(v, t, w, a)?;
    let residual = v * t - w;
    Ok((grad_v(v, t, a, beta, &residual), 2.0 * v.tr_mul(&residual)))
}

fn grad_v(
    v: &DMatrix<f64>,
    t: &DMatrix<f64>,
    a: &DMatrix<f64>,
    beta: f64,
    residual: &DMatrix<f64>,
) -> DMatrix<f64> {
    let fit = 2.0 * residual * t.transpose();
    if beta == 0.0 {
        return fit;
    }
    let graph = -4.0 * a * v + 4.0 * v * v.tr_mul(v);
    fit + beta * graph
}

#[derive(Clone, Copy)]
enum Block {
    V,
    T,
}

struct Problem<'a> {
    w: &'a DMatrix<f64>,
    a: &'a DMatrix<f64>,
    beta: f64,
}

impl Problem<'_> {
    fn loss(&self, v: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        loss_unchecked(v, t, self.w, self.a, self.beta)
    }

    /// One halving line-search step on `block`. Returns the accepted loss, or
    /// the current loss if no trial step decreased it. `step` carries the
    /// last accepted step length between calls.
    fn descend(
        &self,
        block: Block,
        v: &mut DMatrix<f64>,
        t: &mut DMatrix<f64>,
        current: f64,
        step: &mut f64,
    ) -> f64 {
        let residual = &*v * &*t - self.w;
        let grad = match block {
            Block::V => grad_v(v, t, self.a, self.beta, &residual),
            Block::T => 2.0 * v.tr_mul(&residual),
        };
        if grad.iter().all(|g| *g == 0.0) {
            return current;
        }
        let mut trial = *step * 2.0;
        for _ in 0..64 {
            let loss = match block {
                Block::V => {
                    let cand = &*v - trial * &grad;
                    let loss = self.loss(&cand, t);
                    if loss <= current {
                        *v = cand;
                    }
                    loss
                }
                Block::T => {
                    let cand = &*t - trial * &grad;
                    let loss = self.loss(v, &cand);
                    if loss <= current {
                        *t = cand;
                    }
                    loss
                }
            };
            if loss <= current {
                *step = trial;
                return loss;
            }
            trial *= 0.5;
        }
        current
    }
}

/// Alternating block gradient descent on the joint embedding objective.
///
/// `V` and `T` start from `N(0, init_scale² / q)` entries. Each outer
/// iteration takes `inner_steps_v` steps on `V` and then `inner_steps_t` on
/// `T`; the trial step of each block starts at twice its last accepted step.
/// Stops once an outer iteration lowers the loss by less than `rel_tol`
/// relative to its starting value, or after `max_outer_iters`.
pub fn train_vager(
    weights: &BaseWeights,
    graph: &AnalogyGraph,
    cfg: &VagerTrainConfig,
) -> Result<EmbeddingModel> {
    cfg.validate()?;
    let n = weights.n();
    if n < 2 {
        return Err(Error::invalid("need at least two base classes"));
    }
    if graph.class_ids != weights.class_ids {
        return Err(Error::shape(
            "graph and base weights list different classes",
        ));
    }
    let p = weights.p();
    let q = cfg.q;
    if q > p {
        return Err(Error::invalid(format!(
            "embedding dimension q = {q} exceeds parameter dimension p = {p}"
        )));
    }

    let mut rng = seed::rng(cfg.seed);
    let sd = cfg.init_scale / (q as f64).sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut v = DMatrix::from_fn(n, q, |_, _| normal.sample(&mut rng));
    let mut t = DMatrix::from_fn(q, p, |_, _| normal.sample(&mut rng));

    let problem = Problem {
        w: &weights.w,
        a: &graph.adjacency,
        beta: cfg.beta,
    };
    let mut loss = problem.loss(&v, &t);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite initial loss {loss}")));
    }
    let mut trace = vec![loss];
    let mut step_v = cfg.step_size / 2.0;
    let mut step_t = cfg.step_size / 2.0;
    let mut iterations = 0;
    for outer in 0..cfg.max_outer_iters {
        let start = loss;
        for _ in 0..cfg.inner_steps_v {
            loss = problem.descend(Block::V, &mut v, &mut t, loss, &mut step_v);
        }
        for _ in 0..cfg.inner_steps_t {
            loss = problem.descend(Block::T, &mut v, &mut t, loss, &mut step_t);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at outer iteration {outer} (steps V {step_v:e}, T {step_t:e})"
            )));
        }
        trace.push(loss);
        iterations = outer + 1;
        if start - loss <= cfg.rel_tol * start {
            break;
        }
    }

    Ok(EmbeddingModel {
        class_ids: weights.class_ids.clone(),
        v,
        t,
        beta: cfg.beta,
        adjacency: graph.adjacency.clone(),
        weights: weights.w.clone(),
        stats: TrainingStats {
            final_loss: loss,
            outer_iterations: iterations,
            loss_trace: trace,
        },
        pinv_cache: None,
    })
}
