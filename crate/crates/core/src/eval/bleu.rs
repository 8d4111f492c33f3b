//! Sentence BLEU: clipped modified n-gram precisions, geometric mean,
//! brevity penalty, optional add-one smoothing.
//!
//! Tokens come from the retrieval tokenizer, so CJK text scores over
//! character bigrams like everything else in the pipeline.

use std::collections::HashMap;

use crate::matcher::tokenize;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// Raw precisions; any zero numerator zeroes the whole score.
    None,
    /// For n >= 2 with a zero numerator, add one to numerator and
    /// denominator instead of collapsing to zero.
    #[default]
    AddOne,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Effective reference length: the closest to the candidate length, ties
/// resolved toward the shorter reference.
fn effective_reference_length(candidate_len: usize, reference_lens: &[usize]) -> usize {
    let mut best = reference_lens[0];
    for &len in &reference_lens[1..] {
        let better = (len as i64 - candidate_len as i64).abs();
        let current = (best as i64 - candidate_len as i64).abs();
        if better < current || (better == current && len < best) {
            best = len;
        }
    }
    best
}

/// Sentence BLEU of `candidate` against `references` over n-gram orders
/// 1..=`max_n`. An empty candidate scores 0.0; an empty (or all-empty)
/// reference list is an error.
pub fn bleu(
    candidate: &str,
    references: &[&str],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, EvalError> {
    let reference_tokens: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r))
        .filter(|t| !t.is_empty())
        .collect();
    if reference_tokens.is_empty() {
        return Err(EvalError::EmptyReferences);
    }
    let candidate_tokens = tokenize(candidate);
    if candidate_tokens.is_empty() {
        return Ok(0.0);
    }

    let c = candidate_tokens.len();
    let reference_lens: Vec<usize> = reference_tokens.iter().map(Vec::len).collect();
    let r = effective_reference_length(c, &reference_lens);
    let brevity_penalty = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };

    let mut log_sum = 0.0;
    for n in 1..=max_n.max(1) {
        let cand_counts = ngram_counts(&candidate_tokens, n);
        // Clip against the per-ngram maximum across references.
        let mut clip: HashMap<&[String], usize> = HashMap::new();
        for ref_tokens in &reference_tokens {
            for (gram, count) in ngram_counts(ref_tokens, n) {
                let entry = clip.entry(gram).or_insert(0);
                *entry = (*entry).max(count);
            }
        }
        let mut matched = 0usize;
        let mut total = 0usize;
        for (gram, count) in &cand_counts {
            total += count;
            matched += count.min(clip.get(gram).unwrap_or(&0));
        }

        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else {
            match smoothing {
                Smoothing::AddOne if n >= 2 => 1.0 / (total + 1) as f64,
                _ => return Ok(0.0),
            }
        };
        log_sum += precision.ln();
    }

    Ok(brevity_penalty * (log_sum / max_n.max(1) as f64).exp())
}
