use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Macro- and micro-F1 for single-label predictions.
///
/// Micro-F1 equals accuracy. Macro-F1 averages per-class F1 over every class
/// that occurs in `truth` or `pred`; a class with no true positives scores 0.
/// Empty input scores 0 on both.
pub fn f1_scores(truth: &[usize], pred: &[usize]) -> Metrics {
    assert_eq!(
        truth.len(),
        pred.len(),
        "label and prediction counts differ"
    );
    if truth.is_empty() {
        return Metrics {
            macro_f1: 0.0,
            micro_f1: 0.0,
        };
    }
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let classes: BTreeSet<usize> = truth.iter().chain(pred).copied().collect();
    let per_class: f64 = classes
        .iter()
        .map(|&c| {
            let tp = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t == c && **p == c)
                .count();
            let fp = pred.iter().filter(|p| **p == c).count() - tp;
            let fn_ = truth.iter().filter(|t| **t == c).count() - tp;
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .sum();
    Metrics {
        macro_f1: per_class / classes.len() as f64,
        micro_f1: correct as f64 / truth.len() as f64,
    }
}

/// Scores predictions on the given rows; rows whose label is negative are
/// skipped.
pub fn evaluate(predictions: &[usize], labels: &[i64], rows: &[usize]) -> Metrics {
    let (truth, pred): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .filter(|&&r| labels[r] >= 0)
        .map(|&r| (labels[r] as usize, predictions[r]))
        .unzip();
    f1_scores(&truth, &pred)
}
