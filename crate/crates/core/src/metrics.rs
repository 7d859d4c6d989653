//! Error and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Swaps the roles of the positive and negative class.
    pub fn swapped(&self) -> Self {
        ConfusionCounts { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }

    /// Tallies a binary prediction, `true` meaning the positive class.
    pub fn record(&mut self, actual: bool, predicted: bool) {
        match (actual, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

/// Ratios with a zero denominator are `None` and serialize as `null`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("confusion counts are all zero"));
    }
    Ok(MetricsReport {
        precision: ratio(c.tp, c.tp + c.fp),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, total),
        mae: None,
    })
}

/// Mean absolute error `(1/n) Σ |actual_i - predicted_i|`.
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "mae length mismatch: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("mae of empty sequences"));
    }
    let sum: f64 = actual.iter().zip(predicted).map(|(y, f)| (y - f).abs()).sum();
    Ok(sum / actual.len() as f64)
}
