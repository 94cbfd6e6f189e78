//! Evaluation metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricKind {
    Accuracy,
    Rmse,
    RocAuc,
}

impl MetricKind {
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, MetricKind::Rmse)
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Rmse => "rmse",
            MetricKind::RocAuc => "roc_auc",
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(Self::Accuracy),
            "rmse" => Ok(Self::Rmse),
            "roc_auc" | "roc-auc" | "auc" => Ok(Self::RocAuc),
            other => Err(Error::Config(format!("unknown metric `{}`", other))),
        }
    }
}

impl TryFrom<String> for MetricKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricKind> for String {
    fn from(v: MetricKind) -> String {
        String::from(v.name())
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fraction of `rows` whose argmax logit equals the label.
pub fn accuracy(logits: &DenseMatrix, rows: &[usize], labels: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Invalid("accuracy over an empty split".into()));
    }
    let pred = logits.argmax_rows();
    let hits = rows.iter().filter(|&&r| pred[r] == labels[r]).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Root mean squared error between `pred[r]` and `target[r]`.
pub fn rmse(pred: &[f64], target: &[f64], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Invalid("rmse over an empty split".into()));
    }
    let sq: f64 = rows.iter().map(|&r| (pred[r] - target[r]) * (pred[r] - target[r])).sum();
    Ok(math::sqrt(sq / rows.len() as f64))
}

/// Area under the ROC curve via the Mann–Whitney U statistic, with ties
/// given their average rank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("ROC-AUC is undefined when only one class is present".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(core::cmp::Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Positive-class score for two-column logits: the logit margin.
pub fn binary_scores(logits: &DenseMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    if logits.cols() != 2 {
        return Err(Error::Invalid(format!("ROC-AUC needs two classes, logits have {}", logits.cols())));
    }
    Ok(rows.iter().map(|&r| logits.get(r, 1) - logits.get(r, 0)).collect())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}
