//! Human-rating aggregation over the four analysis dimensions.
//!
//! Ratings are real values in [0, 5] (per-annotator averages over the rated
//! samples, with raw integer scores as the degenerate case). Aggregation is
//! arithmetic mean plus population standard deviation, displayed at two
//! decimals as `mean ± std`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const RATING_DIMENSIONS: [&str; 4] = ["relevance", "accuracy", "logic", "expertise"];

/// Ratings per dimension for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSet {
    pub relevance: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub logic: Vec<f64>,
    pub expertise: Vec<f64>,
    pub annotator_count: usize,
}

impl RatingSet {
    fn dimension(&self, name: &str) -> &[f64] {
        match name {
            "relevance" => &self.relevance,
            "accuracy" => &self.accuracy,
            "logic" => &self.logic,
            "expertise" => &self.expertise,
            _ => unreachable!("unknown dimension {name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub mean: f64,
    pub std: f64,
}

fn stats(values: &[f64], dimension: &str) -> Result<DimensionStats, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyDimension(dimension.to_string()));
    }
    for &v in values {
        if !(0.0..=5.0).contains(&v) {
            return Err(EvalError::RatingOutOfRange {
                dimension: dimension.to_string(),
                value: v,
            });
        }
    }
    // Exactly zero spread when all ratings are equal, so "std == 0 iff all
    // equal" holds without floating-point noise.
    if values.iter().all(|v| v == &values[0]) {
        return Ok(DimensionStats {
            mean: values[0],
            std: 0.0,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(DimensionStats {
        mean,
        std: variance.sqrt(),
    })
}

/// Mean and population standard deviation per dimension.
pub fn aggregate_ratings(
    ratings: &RatingSet,
) -> Result<BTreeMap<String, DimensionStats>, EvalError> {
    let mut out = BTreeMap::new();
    for dim in RATING_DIMENSIONS {
        out.insert(dim.to_string(), stats(ratings.dimension(dim), dim)?);
    }
    Ok(out)
}

/// Render a table cell at the fixed two-decimal precision.
pub fn format_mean_std(stats: &DimensionStats) -> String {
    format!("{:.2} ± {:.2}", stats.mean, stats.std)
}
