//! Confusion matrices and macro-averaged classification scores, including
//! averages restricted to the minor classes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
            context: "predictions vs labels",
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("cannot score an empty prediction set"));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        let bad = if t >= n_classes { Some(t) } else if p >= n_classes { Some(p) } else { None };
        if let Some(class) = bad {
            return Err(Error::ClassOutOfRange { class, n_classes });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Macro averages over the minor classes only. Per-class accuracy is the
/// fraction of that class classified correctly, i.e. its recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorScores {
    pub ids: Vec<usize>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub minor: Option<MinorScores>,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Zero denominators give 0 for precision, recall and F1. `minor` is `None`
/// when `minor_ids` is empty.
pub fn score(cm: &ConfusionMatrix, minor_ids: &BTreeSet<usize>) -> Result<ScoreReport> {
    let n = cm.n_classes();
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    if let Some(&class) = minor_ids.iter().find(|&&c| c >= n) {
        return Err(Error::ClassOutOfRange { class, n_classes: n });
    }
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..n).map(|t| cm.counts[t][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let minor = (!minor_ids.is_empty()).then(|| {
        let pick = |v: &[f64]| mean(minor_ids.iter().map(|&c| v[c]));
        MinorScores {
            ids: minor_ids.iter().copied().collect(),
            accuracy: pick(&recall),
            precision: pick(&precision),
            recall: pick(&recall),
            f1: pick(&f1),
        }
    });
    Ok(ScoreReport {
        accuracy: ratio(cm.trace(), total),
        macro_precision: mean(precision.iter().copied()),
        macro_recall: mean(recall.iter().copied()),
        macro_f1: mean(f1.iter().copied()),
        precision,
        recall,
        f1,
        minor,
    })
}
