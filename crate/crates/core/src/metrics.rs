//! Classification metrics: accuracy, balanced accuracy, AUROC and entropies.
//!
//! AUROC uses the Mann–Whitney statistic computed from average ranks, so
//! tied scores count one half. Entropies are in nats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::argmax;
use crate::nncore::RealMatrix;

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean recall over the classes that occur in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} outside {num_classes} classes")));
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn auroc_binary(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("binary labels must be 0 or 1, got {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("AUROC needs both classes present"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of one-vs-rest AUROC over the classes present in
/// `labels` (classes with no negatives are skipped too).
pub fn auroc_macro(probabilities: &RealMatrix, labels: &[usize]) -> Result<f64> {
    let c = probabilities.cols();
    if c < 2 {
        return Err(Error::invalid("macro AUROC needs at least two classes"));
    }
    if probabilities.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} probability rows for {} labels",
            probabilities.rows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0;
    for k in 0..c {
        let binary: Vec<usize> = labels.iter().map(|&l| usize::from(l == k)).collect();
        let positives = binary.iter().sum::<usize>();
        if positives == 0 || positives == binary.len() {
            continue;
        }
        let scores: Vec<f64> = probabilities.iter_rows().map(|r| r[k]).collect();
        total += auroc_binary(&scores, &binary)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("macro AUROC needs at least two classes present"));
    }
    Ok(total / used as f64)
}

fn entropy(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Mean per-row entropy `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn predictive_entropy(probabilities: &RealMatrix) -> Result<f64> {
    let mut total = 0.0;
    for (i, row) in probabilities.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!("row {i} is not a probability distribution")));
        }
        total += entropy(row);
    }
    Ok(total / probabilities.rows() as f64)
}

/// Entropy of the empirical label distribution.
pub fn label_entropy(labels: &[usize], num_classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} outside {num_classes} classes")));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let dist: Vec<f64> = counts.iter().map(|&k| k as f64 / n).collect();
    Ok(entropy(&dist))
}

/// Named metric values for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<String, Vec<f64>>,
    pub samples: usize,
}

/// Accuracy, balanced accuracy, macro AUROC (when at least two classes
/// occur), predictive entropy and label entropy, plus per-class recall.
pub fn evaluate(probabilities: &RealMatrix, labels: &[usize]) -> Result<EvalReport> {
    if probabilities.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} probability rows for {} labels",
            probabilities.rows(),
            labels.len()
        )));
    }
    let c = probabilities.cols();
    let predictions: Vec<usize> = probabilities.iter_rows().map(argmax).collect();
    let mut metrics = BTreeMap::new();
    metrics.insert("accuracy".to_string(), accuracy(&predictions, labels)?);
    metrics.insert(
        "balanced_accuracy".to_string(),
        balanced_accuracy(&predictions, labels, c)?,
    );
    if c >= 2 && labels.iter().any(|&l| l != labels[0]) {
        metrics.insert("auroc".to_string(), auroc_macro(probabilities, labels)?);
    }
    metrics.insert("entropy".to_string(), predictive_entropy(probabilities)?);
    metrics.insert("label_entropy".to_string(), label_entropy(labels, c)?);

    let mut recall = vec![f64::NAN; c];
    for (k, r) in recall.iter_mut().enumerate() {
        let total = labels.iter().filter(|&&l| l == k).count();
        if total > 0 {
            let hits = predictions
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| l == k && p == k)
                .count();
            *r = hits as f64 / total as f64;
        }
    }
    let mut per_class = BTreeMap::new();
    if recall.iter().all(|r| r.is_finite()) {
        per_class.insert("recall".to_string(), recall);
    }
    Ok(EvalReport {
        metrics,
        per_class,
        samples: labels.len(),
    })
}
