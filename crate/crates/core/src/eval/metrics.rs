use std::collections::BTreeMap;

use crate::{ClassId, Error, Result};

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{what} scores are empty")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid(format!("{what} scores contain NaN")));
    }
    Ok(())
}

/// Mann–Whitney AUC: `(#{p > n} + ½ #{p = n}) / (|pos| |neg|)` over all pairs.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, "positive")?;
    check_scores(neg, "negative")?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut greater: u64 = 0;
    let mut equal: u64 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let not_above = sorted.partition_point(|&n| n <= p);
        greater += below as u64;
        equal += (not_above - below) as u64;
    }
    Ok((greater as f64 + 0.5 * equal as f64) / (pos.len() as f64 * neg.len() as f64))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct threshold.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(pos, "positive")?;
    check_scores(neg, "negative")?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(points)
}

/// F1 of the predictions `score >= threshold`; 0 when nothing is predicted
/// positive or precision + recall is 0.
pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no scores"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 || tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-class accuracy averaged over the classes present in `truths`.
pub fn top1_accuracy(predictions: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    let per_class = top1_per_class(predictions, truths)?;
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Fraction of exact matches over all samples.
pub fn top1_micro(predictions: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

pub fn top1_per_class(
    predictions: &[ClassId],
    truths: &[ClassId],
) -> Result<BTreeMap<ClassId, f64>> {
    check_lengths(predictions, truths)?;
    let mut counts: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let e = counts.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(id, (hit, total))| (id, hit as f64 / total as f64))
        .collect())
}

fn check_lengths(predictions: &[ClassId], truths: &[ClassId]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    Ok(())
}
