//! The visual-analogy graph over base classes and novel-to-base similarity.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::data::ClassMeans;
use crate::{ClassId, Error, Result};

/// Default `K` of the similarity ratio.
pub const DEFAULT_SR_K: usize = 10;

/// Complete undirected graph; `adjacency[(i, j)]` is the cosine similarity of
/// the mean features of `class_ids[i]` and `class_ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogyGraph {
    pub class_ids: Vec<ClassId>,
    pub adjacency: DMatrix<f64>,
}

impl AnalogyGraph {
    pub fn n(&self) -> usize {
        self.class_ids.len()
    }

    /// Comma-separated matrix with a `class_id` header row and column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id");
        for id in &self.class_ids {
            out.push_str(&format!(",{id}"));
        }
        out.push('\n');
        for (i, id) in self.class_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for j in 0..self.n() {
                out.push_str(&format!(",{:?}", self.adjacency[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Similarities of one novel class to every base class, in graph row order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub class_ids: Vec<ClassId>,
    pub values: DVector<f64>,
}

impl SimilarityVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn cosine(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

pub fn build_graph(means: &ClassMeans) -> Result<AnalogyGraph> {
    let n = means.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| means.means.row(i).iter().copied().collect())
        .collect();
    let norms = row_norms(&rows, &means.class_ids)?;
    let mut adjacency = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = cosine(&rows[i], &rows[j], norms[i], norms[j]);
            adjacency[(i, j)] = s;
            adjacency[(j, i)] = s;
        }
    }
    Ok(AnalogyGraph {
        class_ids: means.class_ids.clone(),
        adjacency,
    })
}

fn row_norms(rows: &[Vec<f64>], ids: &[ClassId]) -> Result<Vec<f64>> {
    rows.iter()
        .zip(ids)
        .map(|(r, id)| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                Ok(norm)
            } else {
                Err(Error::invalid(format!("class {id} has a zero-norm mean")))
            }
        })
        .collect()
}

pub fn novel_similarity(means: &ClassMeans, novel_mean: &DVector<f64>) -> Result<SimilarityVector> {
    if novel_mean.len() != means.means.ncols() {
        return Err(Error::shape(format!(
            "novel mean has dimension {}, base means {}",
            novel_mean.len(),
            means.means.ncols()
        )));
    }
    let novel_norm = novel_mean.norm();
    if !(novel_norm > 0.0 && novel_norm.is_finite()) {
        return Err(Error::invalid("novel class mean is the zero vector"));
    }
    let novel = novel_mean.as_slice();
    let values = DVector::from_iterator(
        means.n(),
        (0..means.n()).map(|i| {
            let row: Vec<f64> = means.means.row(i).iter().copied().collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                0.0
            } else {
                cosine(novel, &row, novel_norm, norm)
            }
        }),
    );
    Ok(SimilarityVector {
        class_ids: means.class_ids.clone(),
        values,
    })
}

/// Mean of the `k` largest similarities over the mean of all of them.
pub fn similarity_ratio(a: &SimilarityVector, k: usize) -> Result<f64> {
    let n = a.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("K = {k} outside 1..={n}")));
    }
    let mut sorted: Vec<f64> = a.values.iter().copied().collect();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let top = sorted[..k].iter().sum::<f64>() / k as f64;
    let all = sorted.iter().sum::<f64>() / n as f64;
    if all == 0.0 {
        return Err(Error::Numerical(
            "mean similarity is zero; similarity ratio undefined".into(),
        ));
    }
    Ok(top / all)
}

/// The `k` most similar base classes, descending, ties by ascending class id.
pub fn top_k_neighbors(a: &SimilarityVector, k: usize) -> Result<Vec<(ClassId, f64)>> {
    let n = a.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let mut pairs: Vec<(ClassId, f64)> = a
        .class_ids
        .iter()
        .copied()
        .zip(a.values.iter().copied())
        .collect();
    pairs.sort_by(|x, y| match y.1.total_cmp(&x.1) {
        Ordering::Equal => x.0.cmp(&y.0),
        o => o,
    });
    pairs.truncate(k);
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn means(rows: &[&[f64]]) -> ClassMeans {
        let d = rows[0].len();
        ClassMeans {
            class_ids: (0..rows.len() as ClassId).collect(),
            means: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        }
    }

    fn sim(values: &[f64]) -> SimilarityVector {
        SimilarityVector {
            class_ids: (0..values.len() as ClassId).map(|i| 10 + i).collect(),
            values: DVector::from_column_slice(values),
        }
    }

    #[test]
    fn graph_examples() {
        let g = build_graph(&means(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(g.adjacency, DMatrix::identity(2, 2));
        let g = build_graph(&means(&[&[1.0, 1.0], &[2.0, 2.0]])).unwrap();
        assert!((g.adjacency[(0, 1)] - 1.0).abs() < 1e-15);
        let g = build_graph(&means(&[&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]])).unwrap();
        assert!((g.adjacency[(0, 1)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(build_graph(&means(&[&[1.0, 1.0], &[0.0, 0.0]])).is_err());
    }

    #[test]
    fn novel_similarity_examples() {
        let m = means(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        let a = novel_similarity(&m, &DVector::from_column_slice(&[0.0, 3.0, 0.0])).unwrap();
        assert!((a.values[1] - 1.0).abs() < 1e-15);
        let a = novel_similarity(&m, &DVector::from_column_slice(&[0.0, 0.0, 5.0])).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.0));
        assert!(novel_similarity(&m, &DVector::zeros(3)).is_err());
        assert!(novel_similarity(&m, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn similarity_ratio_examples() {
        assert!((similarity_ratio(&sim(&[0.3; 6]), 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((similarity_ratio(&sim(&[0.1, 0.5, 0.2]), 3).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            similarity_ratio(&sim(&[1.0, 0.0, 0.0, 0.0]), 1).unwrap(),
            4.0
        );
        assert!(similarity_ratio(&sim(&[1.0, -1.0]), 1).is_err());
        assert!(similarity_ratio(&sim(&[1.0]), 2).is_err());
    }

    #[test]
    fn top_k_examples() {
        let a = sim(&[0.2, 0.9, 0.5]);
        assert_eq!(top_k_neighbors(&a, 1).unwrap(), vec![(11, 0.9)]);
        let tie = sim(&[0.5, 0.5]);
        assert_eq!(top_k_neighbors(&tie, 1).unwrap(), vec![(10, 0.5)]);
        assert!(top_k_neighbors(&a, 0).is_err());
        assert!(top_k_neighbors(&a, 4).is_err());
    }
}
