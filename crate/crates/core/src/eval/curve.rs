//! Learning-curve runner: evaluate a configuration at increasing training
//! sizes and emit CSV rows, isolating per-size failures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Fixed CSV metric columns, one group per task, following the harness's
/// default task-to-metric binding.
pub const CURVE_METRICS: [&str; 7] = [
    "ema_precision",
    "ema_recall",
    "ema_f1",
    "vqe_accuracy2",
    "vqe_accuracy4",
    "kpe_accuracy",
    "kpe_bleu",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub train_size: usize,
    pub status: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    /// Header `train_size,status,<metrics...>`; failed rows leave metric
    /// cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_size,status,");
        out.push_str(&CURVE_METRICS.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.train_size, row.status));
            for metric in CURVE_METRICS {
                match row.metrics.get(metric) {
                    Some(v) => out.push_str(&format!(",{v:.4}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluate `eval_fn` at each size (sizes strictly ascending, positive).
/// A failing size yields a `failed` row; the remaining sizes still run.
pub fn learning_curve<F>(train_sizes: &[usize], eval_fn: F) -> Result<LearningCurve, EvalError>
where
    F: Fn(usize) -> Result<BTreeMap<String, f64>, String>,
{
    if train_sizes.is_empty() || train_sizes[0] == 0 {
        return Err(EvalError::BadTrainSizes);
    }
    if train_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadTrainSizes);
    }
    let rows = train_sizes
        .iter()
        .map(|&size| match eval_fn(size) {
            Ok(metrics) => CurveRow {
                train_size: size,
                status: "ok".into(),
                metrics,
            },
            Err(_) => CurveRow {
                train_size: size,
                status: "failed".into(),
                metrics: BTreeMap::new(),
            },
        })
        .collect();
    Ok(LearningCurve { rows })
}
