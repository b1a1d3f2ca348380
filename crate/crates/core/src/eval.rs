//! Average precision, mAP and precision-recall curves.
//!
//! AP is the non-interpolated step sum `Σ (R_n − R_{n−1}) · P_n` over
//! descending unique score thresholds; tied scores form one threshold.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{Dataset, LabelState};
use crate::model::{forward, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// One point per unique threshold, in descending threshold order. Empty when
/// there are no positives.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Vec<PrPoint> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let total_pos = labels.iter().filter(|l| **l).count();
    if total_pos == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / total_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold,
        });
    }
    points
}

/// `None` when the labels contain no positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let curve = pr_curve(scores, labels);
    if curve.is_empty() {
        return None;
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for pt in curve {
        ap += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    Some(ap)
}

/// Class average of interpolated precision (`max` precision at recall ≥ r)
/// on a fixed recall grid `0, step, 2·step, …, 1`.
pub fn mean_interpolated_pr(curves: &[Vec<PrPoint>], step: f64) -> Vec<(f64, f64)> {
    let n_steps = (1.0 / step).round() as usize;
    let used: Vec<&Vec<PrPoint>> = curves.iter().filter(|c| !c.is_empty()).collect();
    (0..=n_steps)
        .map(|s| {
            let r = s as f64 * step;
            let mean = used
                .iter()
                .map(|c| {
                    c.iter()
                        .filter(|p| p.recall >= r - 1e-12)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / used.len().max(1) as f64;
            (r, mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for classes without any positive in the evaluated set.
    pub per_class_ap: Vec<Option<f64>>,
    /// Unweighted mean over classes with a defined AP.
    pub map: f64,
    pub pr_curves: Vec<Vec<PrPoint>>,
    pub n_examples_used: usize,
    pub filter_applied: bool,
    pub undefined_classes: Vec<usize>,
}

impl EvalReport {
    /// Builds a report from scores and binary labels (row per example).
    pub fn from_scores(scores: &Array2<f64>, labels: &Array2<bool>, filter_applied: bool) -> Result<Self> {
        let (n, m) = scores.dim();
        if labels.dim() != (n, m) {
            return Err(Error::Dimension(format!("scores {:?} vs labels {:?}", scores.dim(), labels.dim())));
        }
        if n == 0 {
            return Err(Error::EmptyEvaluation(""));
        }
        let mut per_class_ap = Vec::with_capacity(m);
        let mut pr_curves = Vec::with_capacity(m);
        let mut undefined = Vec::new();
        for c in 0..m {
            let s = scores.column(c).to_vec();
            let l = labels.column(c).to_vec();
            let ap = average_precision(&s, &l);
            if ap.is_none() {
                undefined.push(c);
            }
            per_class_ap.push(ap);
            pr_curves.push(pr_curve(&s, &l));
        }
        let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::EmptyEvaluation(" (no class has a positive)"));
        }
        let map = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(Self {
            per_class_ap,
            map,
            pr_curves,
            n_examples_used: n,
            filter_applied,
            undefined_classes: undefined,
        })
    }

    /// `class,threshold,precision,recall` rows plus the class-averaged
    /// interpolated curve (class `mean_interp`, no threshold).
    pub fn pr_curves_csv(&self) -> String {
        let mut out = String::from("class,threshold,precision,recall\n");
        for (c, curve) in self.pr_curves.iter().enumerate() {
            for p in curve {
                let _ = writeln!(out, "{c},{},{},{}", p.threshold, p.precision, p.recall);
            }
        }
        for (r, p) in mean_interpolated_pr(&self.pr_curves, 0.01) {
            let _ = writeln!(out, "mean_interp,,{p},{r:.2}");
        }
        out
    }
}

/// Evaluates a model. With `filter_fully_labeled`, only clips without any
/// Unknown label are used; otherwise Unknown counts as absent.
pub fn evaluate(params: &ModelParams, ds: &Dataset, filter_fully_labeled: bool) -> Result<EvalReport> {
    let rows: Vec<usize> = (0..ds.clips.len())
        .filter(|&i| !filter_fully_labeled || ds.clips[i].fully_labeled())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation(if filter_fully_labeled {
            " after keeping fully labeled examples"
        } else {
            ""
        }));
    }
    let x = ds.features(&rows);
    let trace = forward(params, &x)?;
    let labels = Array2::from_shape_fn((rows.len(), ds.meta.m), |(r, c)| {
        ds.clips[rows[r]].labels.get(c) == LabelState::Positive
    });
    EvalReport::from_scores(&trace.probs, &labels, filter_fully_labeled)
}
