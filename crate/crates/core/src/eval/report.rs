//! Table-shaped evaluation reports.
//!
//! An [`EvalReport`] has an ordered task binding (which metric columns each
//! task carries) and one row per configuration. Cells are plain values,
//! `mean ± std` pairs, or missing (rendered as `-`). Markdown rendering
//! marks the best value per column bold and the second best italic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::f1_from;
use super::ratings::format_mean_std;
use super::{DimensionStats, EvalError};

/// Metric columns one task group carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub metrics: Vec<String>,
}

/// One cell: a plain metric value or a `mean ± std` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Value(f64),
    MeanStd { mean: f64, std: f64 },
}

impl Cell {
    /// Value used for best/second-best ranking.
    fn ranking_value(&self) -> f64 {
        match self {
            Cell::Value(v) => *v,
            Cell::MeanStd { mean, .. } => *mean,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Value(v) => format!("{v:.3}"),
            Cell::MeanStd { mean, std } => format_mean_std(&DimensionStats {
                mean: *mean,
                std: *std,
            }),
        }
    }
}

/// One configuration row; keys are `TASK.metric`, `None` renders as `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_label: String,
    pub cells: BTreeMap<String, Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: String,
    pub task_binding: Vec<TaskMetrics>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "text_table" => Some(Self::TextTable),
            "csv" => Some(Self::Csv),
            "markdown" | "md" => Some(Self::Markdown),
            _ => None,
        }
    }
}

/// Default binding: event matching carries set P/R/F1, viewpoint quality
/// the two accuracies, key points extraction accuracy plus BLEU.
pub fn prose_binding() -> Vec<TaskMetrics> {
    vec![
        TaskMetrics {
            task: "EMA".into(),
            metrics: vec!["precision".into(), "recall".into(), "f1".into()],
        },
        TaskMetrics {
            task: "VQE".into(),
            metrics: vec!["accuracy2".into(), "accuracy4".into()],
        },
        TaskMetrics {
            task: "KPE".into(),
            metrics: vec!["kp_accuracy".into(), "bleu".into()],
        },
    ]
}

/// Alternative binding matching the benchmark tables' column layout:
/// P/R/F1 under KPE and accuracy+BLEU under EMA.
pub fn tables_binding() -> Vec<TaskMetrics> {
    vec![
        TaskMetrics {
            task: "KPE".into(),
            metrics: vec!["precision".into(), "recall".into(), "f1".into()],
        },
        TaskMetrics {
            task: "VQE".into(),
            metrics: vec!["accuracy2".into(), "accuracy4".into()],
        },
        TaskMetrics {
            task: "EMA".into(),
            metrics: vec!["accuracy".into(), "bleu".into()],
        },
    ]
}

impl EvalReport {
    /// Column keys in binding order.
    pub fn columns(&self) -> Vec<String> {
        self.task_binding
            .iter()
            .flat_map(|tm| tm.metrics.iter().map(move |m| format!("{}.{}", tm.task, m)))
            .collect()
    }

    /// Every row must carry exactly the bound columns (missing cells must be
    /// explicit `null`s); anything else errors with the row and metric.
    pub fn validate(&self) -> Result<(), EvalError> {
        let columns = self.columns();
        for row in &self.rows {
            for column in &columns {
                if !row.cells.contains_key(column) {
                    return Err(EvalError::InconsistentRow {
                        row: row.config_label.clone(),
                        metric: column.clone(),
                    });
                }
            }
            for key in row.cells.keys() {
                if !columns.contains(key) {
                    return Err(EvalError::InconsistentRow {
                        row: row.config_label.clone(),
                        metric: key.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, String> {
        let content = std::fs::read_to_string(path.as_ref())
            .map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        serde_json::from_str(&content).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
    }
}

/// Best and second-best ranking values per column (missing cells ignored).
fn column_leaders(report: &EvalReport) -> BTreeMap<String, (Option<f64>, Option<f64>)> {
    let mut leaders = BTreeMap::new();
    for column in report.columns() {
        let mut values: Vec<f64> = report
            .rows
            .iter()
            .filter_map(|r| r.cells.get(&column).and_then(|c| c.as_ref()))
            .map(Cell::ranking_value)
            .collect();
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite metric values"));
        values.dedup();
        let best = values.first().copied();
        let second = values.get(1).copied();
        leaders.insert(column, (best, second));
    }
    leaders
}

/// Deterministic rendering of a validated report.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String, EvalError> {
    report.validate()?;
    let columns = report.columns();
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("config_label,");
            out.push_str(&columns.join(","));
            out.push('\n');
            for row in &report.rows {
                out.push_str(&row.config_label);
                for column in &columns {
                    out.push(',');
                    if let Some(Some(cell)) = row.cells.get(column) {
                        out.push_str(&cell.render().replace(" ± ", "±"));
                    }
                }
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::TextTable => {
            let mut rows_text: Vec<Vec<String>> = vec![];
            let mut header = vec!["config".to_string()];
            header.extend(columns.clone());
            rows_text.push(header);
            for row in &report.rows {
                let mut line = vec![row.config_label.clone()];
                for column in &columns {
                    line.push(match row.cells.get(column) {
                        Some(Some(cell)) => cell.render(),
                        _ => "-".to_string(),
                    });
                }
                rows_text.push(line);
            }
            let widths: Vec<usize> = (0..rows_text[0].len())
                .map(|i| {
                    rows_text
                        .iter()
                        .map(|r| r[i].chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let mut out = String::new();
            if !report.title.is_empty() {
                out.push_str(&format!("{}\n", report.title));
            }
            for (ri, row) in rows_text.iter().enumerate() {
                let line: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .map(|(cell, w)| format!("{cell:<width$}", width = w))
                    .collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
                if ri == 0 {
                    out.push_str(
                        &"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)),
                    );
                    out.push('\n');
                }
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let leaders = column_leaders(report);
            let mut out = String::new();
            if !report.title.is_empty() {
                out.push_str(&format!("## {}\n\n", report.title));
            }
            out.push_str(&format!("| config | {} |\n", columns.join(" | ")));
            out.push_str(&format!("|---|{}\n", "---|".repeat(columns.len())));
            for row in &report.rows {
                out.push_str(&format!("| {} |", row.config_label));
                for column in &columns {
                    let rendered = match row.cells.get(column) {
                        Some(Some(cell)) => {
                            let (best, second) = leaders[column];
                            let v = cell.ranking_value();
                            let text = cell.render();
                            if best == Some(v) {
                                format!("**{text}**")
                            } else if second == Some(v) {
                                format!("_{text}_")
                            } else {
                                text
                            }
                        }
                        _ => "-".to_string(),
                    };
                    out.push_str(&format!(" {rendered} |"));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// A `(P, R, F1)` triple whose printed F1 drifts from the recomputed
/// harmonic mean by more than the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Violation {
    pub row: String,
    pub task: String,
    pub printed_f1: f64,
    pub recomputed_f1: f64,
}

/// Recompute F1 from every (precision, recall, f1) triple in the report and
/// flag cells that disagree beyond `tolerance`.
pub fn check_f1_consistency(report: &EvalReport, tolerance: f64) -> Vec<F1Violation> {
    let mut violations = Vec::new();
    for tm in &report.task_binding {
        let has_triple = ["precision", "recall", "f1"]
            .iter()
            .all(|m| tm.metrics.iter().any(|x| x == m));
        if !has_triple {
            continue;
        }
        for row in &report.rows {
            let get = |metric: &str| -> Option<f64> {
                match row.cells.get(&format!("{}.{}", tm.task, metric)) {
                    Some(Some(Cell::Value(v))) => Some(*v),
                    _ => None,
                }
            };
            let (Some(p), Some(r), Some(f1)) = (get("precision"), get("recall"), get("f1")) else {
                continue;
            };
            let recomputed = f1_from(p, r);
            if (recomputed - f1).abs() > tolerance {
                violations.push(F1Violation {
                    row: row.config_label.clone(),
                    task: tm.task.clone(),
                    printed_f1: f1,
                    recomputed_f1: recomputed,
                });
            }
        }
    }
    violations
}
