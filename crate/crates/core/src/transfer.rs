//! Out-of-sample embedding of a novel class and weight transfer.
//!
//! Freezing the base embeddings `V`, the novel embedding `v` solves
//! `min_v 2 ‖a − v Vᵀ‖²` where `a` holds the novel-to-base similarities. The
//! minimum-norm solution is `v = a (Vᵀ)⁺`, computed from a thin SVD of `V`
//! with small singular values truncated, which stays valid when `V Vᵀ` is
//! singular (always the case once `n > q`). The transferred classifier is
//! then `w = v T`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::classify::{LinearClassifier, Provenance};
use crate::graph::SimilarityVector;
use crate::vager::EmbeddingModel;
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NovelEmbedding {
    pub v: DVector<f64>,
    /// `oos_objective` at `v`.
    pub residual: f64,
}

/// Precomputed `(Vᵀ)⁺`, an `n x q` matrix, so that inference is one product.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvCache {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    pub ridge: f64,
}

/// Thin SVD of V, with the truncation already applied to the singular values
/// (inverted, zero where truncated).
struct Factorization {
    u: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    v_t: DMatrix<f64>,
    rank: usize,
}

fn factorize(v: &DMatrix<f64>, ridge: f64) -> Result<Factorization> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "embedding matrix has non-finite entries".into(),
        ));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let (n, q) = v.shape();
    let svd = SVD::new(v.clone(), true, true);
    let sigma = svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = n.max(q) as f64 * f64::EPSILON * sigma_max;
    let mut rank = 0;
    let inv_sigma = sigma.map(|s| {
        if s > cutoff && s > 0.0 {
            rank += 1;
            s / (s * s + ridge)
        } else {
            0.0
        }
    });
    if rank == 0 {
        return Err(Error::Numerical(
            "embedding matrix has no nonzero singular value".into(),
        ));
    }
    Ok(Factorization {
        u: svd.u.expect("requested U"),
        inv_sigma,
        v_t: svd.v_t.expect("requested Vᵀ"),
        rank,
    })
}

pub fn oos_objective(
    v: &DVector<f64>,
    a: &SimilarityVector,
    embeddings: &DMatrix<f64>,
) -> Result<f64> {
    let (n, q) = embeddings.shape();
    if v.len() != q || a.len() != n {
        return Err(Error::shape(format!(
            "v has length {}, a {}, V is {n} x {q}",
            v.len(),
            a.len()
        )));
    }
    Ok(2.0 * (&a.values - embeddings * v).norm_squared())
}

/// `a (Vᵀ)⁺`, using the model's cache when present.
pub fn infer_embedding(model: &EmbeddingModel, a: &SimilarityVector) -> Result<NovelEmbedding> {
    match &model.pinv_cache {
        Some(cache) => infer_cached(model, cache, a),
        None => infer_embedding_ridge(model, a, 0.0),
    }
}

/// Like [`infer_embedding`] with Tikhonov damping: singular values `s` are
/// inverted as `s / (s² + ridge)`. Ignores any cache.
pub fn infer_embedding_ridge(
    model: &EmbeddingModel,
    a: &SimilarityVector,
    ridge: f64,
) -> Result<NovelEmbedding> {
    check_similarity(model, a)?;
    let f = factorize(&model.v, ridge)?;
    // (a U) Σ⁻¹ Wᵀ, as a column vector
    let coeffs = f.u.tr_mul(&a.values).component_mul(&f.inv_sigma);
    let v = f.v_t.tr_mul(&coeffs);
    finish(model, a, v)
}

fn infer_cached(
    model: &EmbeddingModel,
    cache: &PinvCache,
    a: &SimilarityVector,
) -> Result<NovelEmbedding> {
    check_similarity(model, a)?;
    if cache.pinv.shape() != (model.n(), model.q()) {
        return Err(Error::shape(
            "pseudo-inverse cache does not match the model",
        ));
    }
    let v = cache.pinv.tr_mul(&a.values);
    finish(model, a, v)
}

fn check_similarity(model: &EmbeddingModel, a: &SimilarityVector) -> Result<()> {
    if a.len() != model.n() {
        return Err(Error::shape(format!(
            "similarity vector has {} entries, model has {} base classes",
            a.len(),
            model.n()
        )));
    }
    if a.class_ids != model.class_ids {
        return Err(Error::shape(
            "similarity vector and model list different classes",
        ));
    }
    Ok(())
}

fn finish(model: &EmbeddingModel, a: &SimilarityVector, v: DVector<f64>) -> Result<NovelEmbedding> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("inferred embedding is not finite".into()));
    }
    let residual = oos_objective(&v, a, &model.v)?;
    Ok(NovelEmbedding { v, residual })
}

/// Caches `(Vᵀ)⁺` on the model.
pub fn precompute_solver(model: EmbeddingModel) -> Result<EmbeddingModel> {
    precompute_solver_ridge(model, 0.0)
}

pub fn precompute_solver_ridge(mut model: EmbeddingModel, ridge: f64) -> Result<EmbeddingModel> {
    let f = factorize(&model.v, ridge)?;
    // U Σ⁻¹ Wᵀ
    let mut scaled_u = f.u;
    for (j, mut col) in scaled_u.column_iter_mut().enumerate() {
        col *= f.inv_sigma[j];
    }
    model.pinv_cache = Some(PinvCache {
        pinv: scaled_u * f.v_t,
        rank: f.rank,
        ridge,
    });
    Ok(model)
}

/// `w = v T`.
pub fn transfer_weights(
    embedding: &NovelEmbedding,
    model: &EmbeddingModel,
    class_id: ClassId,
) -> Result<LinearClassifier> {
    if embedding.v.len() != model.q() {
        return Err(Error::shape(format!(
            "embedding has length {}, model q = {}",
            embedding.v.len(),
            model.q()
        )));
    }
    let w = model.t.tr_mul(&embedding.v);
    LinearClassifier::new(class_id, Provenance::Transferred, w.as_slice().to_vec())
}
