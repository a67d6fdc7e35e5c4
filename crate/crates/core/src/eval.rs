//! Detection scoring against ground truth and distances between topic
//! polytopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topics::TopicMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub window: usize,
    /// `(estimated, true)` pairs.
    pub matched_pairs: Vec<(usize, usize)>,
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision, recall and F-score with one-to-one matching inside `window`.
///
/// Candidate pairs are taken greedily in order of increasing distance.
/// With no estimates precision is 1; with no true changepoints recall is 1;
/// both empty scores 1 throughout.
pub fn score_detection(estimated: &[usize], truth: &[usize], window: usize) -> DetectionMetrics {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &e) in estimated.iter().enumerate() {
        for (j, &t) in truth.iter().enumerate() {
            let d = e.abs_diff(t);
            if d <= window {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by_key(|&(d, i, j)| {
        let (e, t) = (estimated[i], truth[j]);
        (d, e.min(t), e.max(t), i, j)
    });
    let mut used_e = vec![false; estimated.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched_pairs = Vec::new();
    for (_, i, j) in pairs {
        if !used_e[i] && !used_t[j] {
            used_e[i] = true;
            used_t[j] = true;
            matched_pairs.push((estimated[i], truth[j]));
        }
    }
    matched_pairs.sort_unstable();
    let m = matched_pairs.len() as f64;
    let (precision, recall) = match (estimated.is_empty(), truth.is_empty()) {
        (true, true) => (1.0, 1.0),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (m / estimated.len() as f64, m / truth.len() as f64),
    };
    DetectionMetrics {
        precision,
        recall,
        f_score: f_measure(precision, recall),
        window,
        matched_pairs,
    }
}

/// Per-run metrics averaged over runs (F is the mean of per-run F-scores,
/// not the F of the mean precision and recall).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub runs: usize,
}

pub fn average(runs: &[DetectionMetrics]) -> Result<MetricsSummary> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs to average"));
    }
    let n = runs.len() as f64;
    Ok(MetricsSummary {
        precision: runs.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: runs.iter().map(|m| m.recall).sum::<f64>() / n,
        f_score: runs.iter().map(|m| m.f_score).sum::<f64>() / n,
        runs: runs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub estimated: Vec<usize>,
    pub truth: Vec<usize>,
    pub metrics: DetectionMetrics,
}

fn check_vocab(a: &TopicMatrix, b: &TopicMatrix) -> Result<()> {
    if a.vocab_size() != b.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: a.vocab_size(),
            got: b.vocab_size(),
        });
    }
    Ok(())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest distance from a topic of `a` to its nearest topic in `b`.
pub fn one_sided_error(a: &TopicMatrix, b: &TopicMatrix) -> Result<f64> {
    check_vocab(a, b)?;
    Ok(a.columns()
        .map(|ca| b.columns().map(|cb| l2(ca, cb)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Symmetric minimum-matching distance: the larger of the two one-sided
/// errors.
pub fn min_matching_distance(a: &TopicMatrix, b: &TopicMatrix) -> Result<f64> {
    Ok(one_sided_error(a, b)?.max(one_sided_error(b, a)?))
}
