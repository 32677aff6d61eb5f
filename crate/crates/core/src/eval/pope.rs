use alloc::string::String;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Answer {
    Yes,
    No,
}

/// One yes/no object-presence probe. All turns are pooled when scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PopeItem {
    pub image_id: String,
    pub turn: usize,
    pub object: String,
    pub gold: Answer,
    pub pred: Answer,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PopeReport {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PopeReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            true_positive: tp,
            false_positive: fp,
            false_negative: fn_,
            true_negative: tn,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
        }
    }
}

/// Binary metrics with "yes" as the positive class.
pub fn pope_score(items: &[PopeItem]) -> Result<PopeReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for item in items {
        match (item.gold, item.pred) {
            (Answer::Yes, Answer::Yes) => tp += 1,
            (Answer::No, Answer::Yes) => fp += 1,
            (Answer::Yes, Answer::No) => fn_ += 1,
            (Answer::No, Answer::No) => tn += 1,
        }
    }
    Ok(PopeReport::from_counts(tp, fp, fn_, tn))
}
