//! Classification metrics over the two classes.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Label;

/// `confusion[true][predicted]`, indexed by [`Label::index`].
pub type Confusion = [[u64; 2]; 2];

/// One epoch of the loss trace. Losses are batch means averaged over the
/// epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub total: f64,
    pub msc: f64,
    pub sc: f64,
    pub fl: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub n: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<EpochTrace>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let n: u64 = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::invalid("records", "cannot compute metrics on an empty set"));
        }
        let mut precision = 0.0;
        let mut recall = 0.0;
        let mut f1 = 0.0;
        for c in 0..2 {
            let tp = confusion[c][c];
            let actual = confusion[c][0] + confusion[c][1];
            let predicted = confusion[0][c] + confusion[1][c];
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision += p;
            recall += r;
            f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        Ok(MetricsReport {
            accuracy: ratio(confusion[0][0] + confusion[1][1], n),
            precision: precision / 2.0,
            recall: recall / 2.0,
            f1: f1 / 2.0,
            confusion,
            n,
            trace: Vec::new(),
        })
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(alloc::format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0u64; 2]; 2];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion)
    }
}

/// Argmax over the two class probabilities; a tie goes to CONTROL.
pub fn predict(probs: [f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Depressed
    } else {
        Label::Control
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_predictions() {
        let t = vec![Label::Control, Label::Depressed, Label::Control];
        let m = MetricsReport::from_predictions(&t, &t).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.confusion[0][1] + m.confusion[1][0], 0);
    }

    #[test]
    fn all_control_on_balanced_set() {
        let t = vec![Label::Control, Label::Control, Label::Depressed, Label::Depressed];
        let p = vec![Label::Control; 4];
        let m = MetricsReport::from_predictions(&t, &p).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall, 0.5);
        // Class 0: precision 1/2, recall 1 -> F1 2/3; class 1: 0.
        assert!((m.f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_from_confusion() {
        // TP = 8, FN = 2, FP = 1, TN = 9 with DEPRESSED as positive.
        let m = MetricsReport::from_confusion([[9, 1], [2, 8]]).unwrap();
        assert!((m.accuracy - 0.85).abs() < 1e-15);
        assert_eq!(m.n, 20);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(MetricsReport::from_confusion([[0, 0], [0, 0]]).is_err());
    }

    #[test]
    fn ties_predict_control() {
        assert_eq!(predict([0.5, 0.5]), Label::Control);
        assert_eq!(predict([0.4, 0.6]), Label::Depressed);
    }
}
