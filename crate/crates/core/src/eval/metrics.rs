//! Set precision/recall/F1, multi-class accuracy, and key-point field
//! accuracy. All functions are pure.

use std::collections::BTreeSet;

use crate::keypoint::KeyPointRecord;
use crate::viewpoint::{collapse, Label2, Label4};

use super::EvalError;

/// Harmonic mean of precision and recall; zero when both vanish.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Set precision/recall/F1. Precision is 0 for an empty prediction set;
/// an empty gold set leaves recall undefined and errors.
pub fn precision_recall_f1(
    pred: &BTreeSet<String>,
    gold: &BTreeSet<String>,
) -> Result<(f64, f64, f64), EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let intersection = pred.intersection(gold).count() as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        intersection / pred.len() as f64
    };
    let recall = intersection / gold.len() as f64;
    Ok((precision, recall, f1_from(precision, recall)))
}

fn to_label2(label: &str) -> Option<Label2> {
    if let Some(l4) = Label4::parse(label) {
        return Some(collapse(l4));
    }
    match label.trim().to_ascii_lowercase().as_str() {
        "bad" => Some(Label2::Bad),
        _ => None,
    }
}

/// Fraction of exactly matching labels. With `classes == 2`, four-class
/// labels are collapsed first ({excellent, good} -> good, else bad); with
/// `classes == 4`, labels must be four-class values.
pub fn accuracy(preds: &[String], golds: &[String], classes: usize) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            pred: preds.len(),
            gold: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyLabels);
    }
    let mut hits = 0usize;
    match classes {
        2 => {
            for (p, g) in preds.iter().zip(golds) {
                let p2 = to_label2(p).ok_or_else(|| EvalError::InvalidLabel {
                    label: p.clone(),
                    classes: 2,
                })?;
                let g2 = to_label2(g).ok_or_else(|| EvalError::InvalidLabel {
                    label: g.clone(),
                    classes: 2,
                })?;
                if p2 == g2 {
                    hits += 1;
                }
            }
        }
        4 => {
            for (p, g) in preds.iter().zip(golds) {
                let p4 = Label4::parse(p).ok_or_else(|| EvalError::InvalidLabel {
                    label: p.clone(),
                    classes: 4,
                })?;
                let g4 = Label4::parse(g).ok_or_else(|| EvalError::InvalidLabel {
                    label: g.clone(),
                    classes: 4,
                })?;
                if p4 == g4 {
                    hits += 1;
                }
            }
        }
        other => return Err(EvalError::InvalidClassCount(other)),
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-field scores for one extracted record against gold.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointAccuracy {
    pub industry: f64,
    pub indicators: f64,
    pub perspectives: f64,
    pub sentiment: f64,
    pub overall: f64,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

fn normalized_set(items: &[String]) -> BTreeSet<String> {
    items.iter().map(|s| normalize(s)).collect()
}

fn set_f1(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let intersection = pred.intersection(gold).count() as f64;
    let p = intersection / pred.len() as f64;
    let r = intersection / gold.len() as f64;
    f1_from(p, r)
}

/// Exact normalized match for industry and sentiment, set-F1 for the two
/// list fields; overall is the unweighted mean of the four.
pub fn keypoint_accuracy(pred: &KeyPointRecord, gold: &KeyPointRecord) -> KeypointAccuracy {
    let industry = if normalize(&pred.industry) == normalize(&gold.industry) {
        1.0
    } else {
        0.0
    };
    let sentiment = if pred.sentiment == gold.sentiment {
        1.0
    } else {
        0.0
    };
    let indicators = set_f1(
        &normalized_set(&pred.indicators),
        &normalized_set(&gold.indicators),
    );
    let perspectives = set_f1(
        &normalized_set(&pred.perspectives),
        &normalized_set(&gold.perspectives),
    );
    let overall = (industry + sentiment + indicators + perspectives) / 4.0;
    KeypointAccuracy {
        industry,
        indicators,
        perspectives,
        sentiment,
        overall,
    }
}
