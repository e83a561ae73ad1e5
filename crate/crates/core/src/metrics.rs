//! Average precision, precision-recall curves and bag-level scoring.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, MilError, Result};
use crate::scalar::Scalar;

/// One operating point of a precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Step-wise precision-recall curve over the distinct scores, highest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

impl PrCurve {
    pub fn thresholds(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.threshold)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "precision", "recall"])?;
        for p in &self.points {
            w.serialize((p.threshold, p.precision, p.recall))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Non-interpolated AP `sum_n (R_n - R_{n-1}) P_n`, one step per distinct score.
///
/// Tied scores share a single threshold, so the result does not depend on
/// input order.
pub fn average_precision<T: Scalar>(scores: &[T], truth: &[bool]) -> Result<PrCurve> {
    ensure_len(scores.len(), truth.len())?;
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return Err(MilError::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    if s.iter().any(|v| v.is_nan()) {
        return Err(MilError::Domain("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_unstable_by(|&a, &b| s[b].total_cmp(&s[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut steps = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = s[order[i]];
        while i < order.len() && s[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((t, tp, fp));
    }
    Ok(curve_from_counts(&steps, n_pos))
}

/// Assembles the curve from cumulative `(threshold, tp, fp)` counts.
/// Shared by the fast path and the enumeration oracle so both sum in the
/// same order.
pub(crate) fn curve_from_counts(steps: &[(f64, usize, usize)], n_pos: usize) -> PrCurve {
    let n_pos = n_pos as f64;
    let mut points = Vec::with_capacity(steps.len());
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for &(threshold, tp, fp) in steps {
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint { threshold, precision, recall });
    }
    PrCurve { points, ap }
}

/// Reference AP by explicit enumeration: for every distinct score, count
/// the instances at or above it. Quadratic; meant for testing.
pub fn average_precision_bruteforce<T: Scalar>(scores: &[T], truth: &[bool]) -> Result<PrCurve> {
    ensure_len(scores.len(), truth.len())?;
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return Err(MilError::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    let mut thresholds = s.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let steps: Vec<_> = thresholds
        .iter()
        .map(|&t| {
            let tp = s.iter().zip(truth).filter(|(v, &y)| **v >= t && y).count();
            let fp = s.iter().zip(truth).filter(|(v, &y)| **v >= t && !y).count();
            (t, tp, fp)
        })
        .collect();
    Ok(curve_from_counts(&steps, n_pos))
}

/// Bag score: the largest instance score.
pub fn bag_max_score<T: Scalar>(instance_scores: &[T]) -> Result<T> {
    instance_scores.iter().copied().reduce(T::max).ok_or_else(|| MilError::Domain("empty bag".into()))
}

/// Per-label AP and their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `None` where the label has no positives.
    pub per_label: Vec<Option<f64>>,
    pub map: f64,
    pub excluded: usize,
}

impl MapReport {
    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        Ok(())
    }
}

/// Mean AP over labels whose AP is defined.
pub fn map_over_labels(curves: &[Result<PrCurve>]) -> Result<MapReport> {
    let per_label: Vec<Option<f64>> = curves.iter().map(|c| c.as_ref().ok().map(|c| c.ap)).collect();
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MilError::UndefinedMetric("no label has a defined average precision".into()));
    }
    Ok(MapReport { map: defined.iter().sum::<f64>() / defined.len() as f64, excluded: per_label.len() - defined.len(), per_label })
}

/// AP of every label column; `scores[i][z]`, `truth[i][z]`.
pub fn per_label_ap<T: Scalar>(scores: &[Vec<T>], truth: &[Vec<bool>]) -> Result<Vec<Result<PrCurve>>> {
    ensure_len(scores.len(), truth.len())?;
    let k = truth.first().map_or(0, Vec::len);
    for (s, t) in scores.iter().zip(truth) {
        ensure_len(k, s.len())?;
        ensure_len(k, t.len())?;
    }
    Ok((0..k)
        .into_par_iter()
        .map(|z| {
            let s: Vec<T> = scores.iter().map(|r| r[z]).collect();
            let t: Vec<bool> = truth.iter().map(|r| r[z]).collect();
            average_precision(&s, &t)
        })
        .collect())
}
