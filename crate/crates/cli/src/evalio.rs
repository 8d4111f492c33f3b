//! Prediction/gold JSONL schemas and metric computation for `eval` and
//! `curve`.
//!
//! Each line carries a join key plus the fields its metrics need:
//! `ids` for set precision/recall/F1, `label` for the accuracies,
//! `record` for key-point accuracy, `summary` (prediction side) and
//! `references` (gold side) for BLEU.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use finsight_core::eval::{
    accuracy, bleu, f1_from, keypoint_accuracy, precision_recall_f1, Smoothing,
};
use finsight_core::keypoint::KeyPointRecord;

#[derive(Debug, Clone, Deserialize)]
pub struct EvalLine {
    pub key: String,
    #[serde(default)]
    pub ids: Option<Vec<String>>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub record: Option<KeyPointRecord>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub references: Option<Vec<String>>,
}

pub fn read_lines(path: &Path) -> Result<Vec<EvalLine>> {
    let raw =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EvalLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed line", path.display(), i + 1))?;
        lines.push(parsed);
    }
    if lines.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(lines)
}

/// Pair prediction and gold lines by key; every prediction needs exactly one
/// gold partner.
pub fn join_by_key(pred: Vec<EvalLine>, gold: Vec<EvalLine>) -> Result<Vec<(EvalLine, EvalLine)>> {
    let mut gold_map: BTreeMap<String, EvalLine> = BTreeMap::new();
    for g in gold {
        if gold_map.insert(g.key.clone(), g).is_some() {
            bail!("duplicate gold key");
        }
    }
    let mut pairs = Vec::new();
    for p in pred {
        let g = gold_map
            .remove(&p.key)
            .with_context(|| format!("prediction key {:?} missing from gold", p.key))?;
        pairs.push((p, g));
    }
    if !gold_map.is_empty() {
        let leftover: Vec<&String> = gold_map.keys().collect();
        bail!("gold keys without predictions: {leftover:?}");
    }
    Ok(pairs)
}

fn id_set(line: &EvalLine, side: &str, metric: &str) -> Result<BTreeSet<String>> {
    if let Some(ids) = &line.ids {
        return Ok(ids.iter().map(|s| s.trim().to_string()).collect());
    }
    // Fall back to the record's item sets so P/R/F1 stays computable for
    // extraction outputs.
    if let Some(record) = &line.record {
        return Ok(record
            .indicators
            .iter()
            .chain(record.perspectives.iter())
            .map(|s| s.trim().to_lowercase())
            .collect());
    }
    bail!(
        "metric {metric} requires `ids` (or `record`) on the {side} line {:?}",
        line.key
    )
}

fn labels_of(pairs: &[(EvalLine, EvalLine)], metric: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for (p, g) in pairs {
        preds.push(p.label.clone().with_context(|| {
            format!(
                "metric {metric} requires `label` on the prediction line {:?}",
                p.key
            )
        })?);
        golds.push(g.label.clone().with_context(|| {
            format!(
                "metric {metric} requires `label` on the gold line {:?}",
                g.key
            )
        })?);
    }
    Ok((preds, golds))
}

/// Compute the named metrics over joined line pairs. Set P/R are
/// macro-averaged per key and F1 is their harmonic mean, so emitted
/// (P, R, F1) triples always satisfy the harmonic-mean consistency check.
pub fn compute_metrics(
    metrics: &[String],
    pairs: &[(EvalLine, EvalLine)],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let mut prf: Option<(f64, f64, f64)> = None;

    for metric in metrics {
        let value = match metric.as_str() {
            "precision" | "recall" | "f1" => {
                if prf.is_none() {
                    let mut p_sum = 0.0;
                    let mut r_sum = 0.0;
                    for (p, g) in pairs {
                        let pred_set = id_set(p, "prediction", metric)?;
                        let gold_set = id_set(g, "gold", metric)?;
                        let (pp, rr, _) = precision_recall_f1(&pred_set, &gold_set)?;
                        p_sum += pp;
                        r_sum += rr;
                    }
                    let n = pairs.len() as f64;
                    let (p, r) = (p_sum / n, r_sum / n);
                    prf = Some((p, r, f1_from(p, r)));
                }
                let (p, r, f1) = prf.unwrap();
                match metric.as_str() {
                    "precision" => p,
                    "recall" => r,
                    _ => f1,
                }
            }
            "accuracy2" => {
                let (preds, golds) = labels_of(pairs, metric)?;
                accuracy(&preds, &golds, 2)?
            }
            "accuracy4" => {
                let (preds, golds) = labels_of(pairs, metric)?;
                accuracy(&preds, &golds, 4)?
            }
            "accuracy" => {
                let (preds, golds) = labels_of(pairs, metric)?;
                let hits = preds
                    .iter()
                    .zip(&golds)
                    .filter(|(p, g)| p.trim().to_lowercase() == g.trim().to_lowercase())
                    .count();
                hits as f64 / preds.len() as f64
            }
            "kp_accuracy" => {
                let mut sum = 0.0;
                for (p, g) in pairs {
                    let pr = p.record.as_ref().with_context(|| {
                        format!(
                            "metric kp_accuracy requires `record` on prediction {:?}",
                            p.key
                        )
                    })?;
                    let gr = g.record.as_ref().with_context(|| {
                        format!("metric kp_accuracy requires `record` on gold {:?}", g.key)
                    })?;
                    sum += keypoint_accuracy(pr, gr).overall;
                }
                sum / pairs.len() as f64
            }
            "bleu" => {
                let mut sum = 0.0;
                for (p, g) in pairs {
                    let candidate = p.summary.as_deref().with_context(|| {
                        format!("metric bleu requires `summary` on prediction {:?}", p.key)
                    })?;
                    let references = g.references.as_ref().with_context(|| {
                        format!("metric bleu requires `references` on gold {:?}", g.key)
                    })?;
                    let refs: Vec<&str> = references.iter().map(String::as_str).collect();
                    sum += bleu(candidate, &refs, 4, Smoothing::AddOne)?;
                }
                sum / pairs.len() as f64
            }
            other => bail!("unknown metric {other:?}"),
        };
        out.insert(metric.clone(), value);
    }
    Ok(out)
}
