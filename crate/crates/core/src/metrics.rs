//! Confusion matrix and accuracy / precision / recall / F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Two-by-two table: one row per actual class, one column per predicted class.
    pub fn to_csv(&self) -> String {
        format!(
            "actual,predicted_cough,predicted_non_cough\ncough,{},{}\nnon_cough,{},{}\n",
            self.tp, self.fn_, self.fp, self.tn
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Tallies predictions `prob >= threshold` against binary labels.
pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y != 0) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// Zero denominators yield 0 for precision, recall and F1.
pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricsSummary, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MetricsSummary {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

/// Confusion matrix plus summary at a threshold.
pub fn evaluate(probs: &[f64], labels: &[u8], threshold: f64) -> Result<(ConfusionMatrix, MetricsSummary), MetricsError> {
    let cm = confusion(probs, labels, threshold)?;
    let summary = summarize(&cm)?;
    Ok((cm, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 0, fn_: 0, tn: 1 });
        let cm = confusion(&[0.9, 0.99, 1.0], &[1, 0, 1], 1.01).unwrap();
        assert_eq!(cm.tp + cm.fp, 0);
        let cm = confusion(&[0.5], &[0], 0.5).unwrap();
        assert_eq!(cm.fp, 1);
        assert!(matches!(
            confusion(&[0.5], &[0, 1], 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&ConfusionMatrix { tp: 1, fp: 1, fn_: 1, tn: 1 }).unwrap();
        assert_eq!([s.accuracy, s.precision, s.recall, s.f1], [0.5; 4]);
        let s = summarize(&ConfusionMatrix { tp: 2, fp: 0, fn_: 0, tn: 2 }).unwrap();
        assert_eq!([s.accuracy, s.precision, s.recall, s.f1], [1.0; 4]);
        let s = summarize(&ConfusionMatrix { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(summarize(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn published_cnn_row_is_consistent() {
        assert!((f1_score(0.9708, 0.9583) - 0.9645).abs() < 5e-4);
    }

    proptest! {
        #[test]
        fn summary_invariant_under_joint_permutation(
            pairs in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60),
            rot in 0usize..60,
        ) {
            let (p, y): (Vec<f64>, Vec<u8>) = pairs.iter().cloned().unzip();
            let mut rotated = pairs.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            let (p2, y2): (Vec<f64>, Vec<u8>) = rotated.into_iter().unzip();
            let a = summarize(&confusion(&p, &y, 0.5).unwrap()).unwrap();
            let b = summarize(&confusion(&p2, &y2, 0.5).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn raising_threshold_is_monotone(
            pairs in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..1.0,
        ) {
            let (p, y): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            let lo = confusion(&p, &y, t1).unwrap();
            let hi = confusion(&p, &y, t1 + dt).unwrap();
            prop_assert!(hi.fp <= lo.fp);
            prop_assert!(hi.fn_ >= lo.fn_);
            prop_assert_eq!(lo.total(), p.len() as u64);
        }
    }
}
