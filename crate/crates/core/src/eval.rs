//! Detection metrics over anomaly scores (label 1 = attack).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {s} is not a number")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (Mann–Whitney U over average ranks).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let idx = order(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    /// Scores at or above this value are flagged as attacks.
    pub threshold: f64,
    pub seed: u64,
}

/// Precision, recall and F1 when flagging `score ≥ threshold`.
pub fn metrics_at(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    prf(tp, fp, fn_)
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Best-F1 threshold over every distinct score; among equal F1 values the
/// smallest threshold wins. `seed` is copied into the report.
pub fn optimal_threshold_metrics(scores: &[f64], labels: &[u8], seed: u64) -> Result<MetricsReport> {
    let (pos, _) = check(scores, labels)?;
    let auc = auroc(scores, labels)?;
    let idx = order(scores);
    // Walk thresholds from the largest score down; everything at or above
    // the current distinct value is flagged.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut i = idx.len();
    while i > 0 {
        let t = scores[idx[i - 1]];
        while i > 0 && scores[idx[i - 1]] == t {
            if labels[idx[i - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        let (p, r, f) = prf(tp, fp, pos - tp);
        if best.is_none_or(|b| f >= b.2) {
            best = Some((p, r, f, t));
        }
    }
    let (precision, recall, f1, threshold) = best.expect("non-empty scores");
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        auroc: auc,
        threshold,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (`n − 1` denominator, 0 for one value).
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Metric("no values to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub auroc: MeanStd,
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::Metric("no run reports to aggregate".into()));
    }
    let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        runs: reports.len(),
        precision: col(|r| r.precision)?,
        recall: col(|r| r.recall)?,
        f1: col(|r| r.f1)?,
        auroc: col(|r| r.auroc)?,
    })
}
