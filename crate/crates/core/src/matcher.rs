//! Event matching: lexical retrieval over an inverted index with BM25
//! scoring (k1=1.2, b=0.75), plus optional LLM-based analogy reranking.
//!
//! Tokenization is script-aware and deterministic: alphabetic runs are
//! lowercased whole words, digit runs are kept intact, contiguous CJK runs
//! become overlapping character bigrams, and punctuation separates tokens.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSnapshot;
use crate::exec;
use crate::gateway::{builtin, template::bindings, BackendHandle, ChatRequest, GatewayError};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("unmatchable query: no tokens after tokenization")]
    UnmatchableQuery,
    #[error("cannot index an empty snapshot")]
    EmptySnapshot,
    #[error("rerank candidates empty")]
    NoCandidates,
    #[error("rerank candidate {material_id} not present in snapshot")]
    UnknownMaterial { material_id: String },
    #[error("backend failure during rerank: {0}")]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] crate::gateway::TemplateError),
}

/// One retrieval hit. `rank` is 1-based and gap-free within a result list;
/// `rerank_score` is set only after LLM reranking and only for candidates
/// whose reply parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedMaterial {
    pub material_id: String,
    pub score: f64,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<i64>,
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'     // CJK unified ideographs
        | '\u{3400}'..='\u{4DBF}'   // extension A
        | '\u{F900}'..='\u{FAFF}'   // compatibility ideographs
        | '\u{20000}'..='\u{2A6DF}' // extension B
        | '\u{3040}'..='\u{30FF}'   // hiragana + katakana
        | '\u{AC00}'..='\u{D7AF}'   // hangul syllables
    )
}

#[derive(PartialEq, Clone, Copy)]
enum CharClass {
    Cjk,
    Alpha,
    Digit,
    Other,
}

fn classify(c: char) -> CharClass {
    if is_cjk(c) {
        CharClass::Cjk
    } else if c.is_alphabetic() {
        CharClass::Alpha
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Tokenize text into normalized terms. Empty input yields an empty stream.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    let mut run_class = CharClass::Other;

    let flush = |run: &mut String, class: CharClass, tokens: &mut Vec<String>| {
        if run.is_empty() {
            return;
        }
        match class {
            CharClass::Alpha => tokens.push(run.to_lowercase()),
            CharClass::Digit => tokens.push(run.clone()),
            CharClass::Cjk => {
                let chars: Vec<char> = run.chars().collect();
                if chars.len() == 1 {
                    tokens.push(run.clone());
                } else {
                    for pair in chars.windows(2) {
                        tokens.push(pair.iter().collect());
                    }
                }
            }
            CharClass::Other => {}
        }
        run.clear();
    };

    for c in text.chars() {
        let class = classify(c);
        if class != run_class {
            flush(&mut run, run_class, &mut tokens);
            run_class = class;
        }
        if class != CharClass::Other {
            run.push(c);
        }
    }
    flush(&mut run, run_class, &mut tokens);
    tokens
}

/// Inverted index over a corpus snapshot. Immutable after build.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    /// token -> (doc position in snapshot order, term frequency)
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, material_id: &str) -> Option<u32> {
        self.doc_ids
            .iter()
            .position(|id| id == material_id)
            .map(|i| self.doc_lengths[i])
    }

    pub fn postings(&self, token: &str) -> Option<&[(usize, u32)]> {
        self.postings.get(token).map(|v| v.as_slice())
    }

    pub fn doc_id(&self, pos: usize) -> &str {
        &self.doc_ids[pos]
    }
}

/// Build the inverted index for a snapshot. Tokens come from [`tokenize`]
/// applied to each material text; rebuilding on the same snapshot yields an
/// identical index.
pub fn build_index(snapshot: &CorpusSnapshot) -> Result<InvertedIndex, MatchError> {
    if snapshot.is_empty() {
        return Err(MatchError::EmptySnapshot);
    }
    let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
    let mut doc_ids = Vec::with_capacity(snapshot.len());
    let mut doc_lengths = Vec::with_capacity(snapshot.len());
    let mut total_len: u64 = 0;

    for (pos, material) in snapshot.materials().iter().enumerate() {
        let tokens = tokenize(&material.text);
        doc_ids.push(material.id.clone());
        doc_lengths.push(tokens.len() as u32);
        total_len += tokens.len() as u64;

        let mut freqs: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *freqs.entry(t).or_insert(0) += 1;
        }
        for (token, tf) in freqs {
            postings.entry(token).or_default().push((pos, tf));
        }
    }

    Ok(InvertedIndex {
        postings,
        avg_doc_length: total_len as f64 / doc_lengths.len() as f64,
        doc_ids,
        doc_lengths,
    })
}

/// Robertson/Sparck-Jones IDF with the +1 shift that keeps it positive.
fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatchOptions {
    /// Keep candidates whose BM25 score is zero (they rank after all
    /// positive scores, ordered by id). Off by default.
    pub include_zero_scores: bool,
}

/// Top-k materials for a query by BM25 over the index. Ties break by
/// ascending material id. Fewer than `k` results are returned when the
/// corpus is smaller or zero-score candidates are filtered.
pub fn match_events(
    query: &str,
    index: &InvertedIndex,
    k: usize,
) -> Result<Vec<MatchedMaterial>, MatchError> {
    match_events_with(query, index, k, MatchOptions::default())
}

pub fn match_events_with(
    query: &str,
    index: &InvertedIndex,
    k: usize,
    options: MatchOptions,
) -> Result<Vec<MatchedMaterial>, MatchError> {
    let query_tokens = tokenize(query);
    if query_tokens.is_empty() {
        return Err(MatchError::UnmatchableQuery);
    }

    // Per query token: (idf, doc -> tf) lookup. Repeated query tokens
    // contribute once per occurrence, like the brute-force definition.
    let term_tables: Vec<(f64, HashMap<usize, u32>)> = query_tokens
        .iter()
        .map(|t| {
            let posting = index.postings.get(t);
            let df = posting.map_or(0, |p| p.len());
            let table: HashMap<usize, u32> = posting
                .map(|p| p.iter().copied().collect())
                .unwrap_or_default();
            (idf(index.doc_count(), df), table)
        })
        .collect();

    let candidates: Vec<usize> = if options.include_zero_scores {
        (0..index.doc_count()).collect()
    } else {
        let mut set: Vec<usize> = term_tables
            .iter()
            .flat_map(|(_, table)| table.keys().copied())
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    };

    let scored: Vec<(usize, f64)> = exec::map_ordered(candidates, |pos| {
        let doc_len = index.doc_lengths[pos] as f64;
        let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * doc_len / index.avg_doc_length);
        let mut score = 0.0;
        for (idf, table) in &term_tables {
            if let Some(&tf) = table.get(&pos) {
                let tf = tf as f64;
                score += idf * (tf * (BM25_K1 + 1.0)) / (tf + norm);
            }
        }
        (pos, score)
    });

    let mut scored: Vec<(usize, f64)> = if options.include_zero_scores {
        scored
    } else {
        scored.into_iter().filter(|(_, s)| *s > 0.0).collect()
    };
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("BM25 scores are finite")
            .then_with(|| index.doc_ids[a.0].cmp(&index.doc_ids[b.0]))
    });
    scored.truncate(k);

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (pos, score))| MatchedMaterial {
            material_id: index.doc_ids[pos].clone(),
            score,
            rank: i + 1,
            rerank_score: None,
        })
        .collect())
}

/// Ask the backend to score each candidate's analogy relevance 0-10 and
/// re-sort by (rerank_score desc, original rank asc). Candidates whose reply
/// does not parse keep `rerank_score: None` and sort after all scored ones,
/// preserving their relative lexical order.
pub fn llm_rerank(
    query: &str,
    candidates: &[MatchedMaterial],
    snapshot: &CorpusSnapshot,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<Vec<MatchedMaterial>, MatchError> {
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    let template = builtin::rerank();
    let by_id = snapshot.by_id();

    let jobs: Vec<(usize, MatchedMaterial, String)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let text = by_id
                .get(c.material_id.as_str())
                .map(|m| m.text.clone())
                .ok_or_else(|| MatchError::UnknownMaterial {
                    material_id: c.material_id.clone(),
                })?;
            Ok((i, c.clone(), text))
        })
        .collect::<Result<_, MatchError>>()?;

    type Scored = Result<(usize, MatchedMaterial, Option<i64>), MatchError>;
    let replies: Vec<Scored> = exec::map_ordered(jobs, |(i, candidate, text)| {
        let prompt = template.render(
            &bindings([("query", query.to_string()), ("candidate", text)]),
            0,
        )?;
        let reply = backend.complete(&ChatRequest::simple(prompt, seed))?;
        Ok((i, candidate, parse_rerank_score(&reply.content)))
    });

    let mut reranked = Vec::with_capacity(candidates.len());
    for r in replies {
        let (original_rank, mut candidate, score) = r?;
        candidate.rerank_score = score;
        reranked.push((original_rank, candidate));
    }
    // None sorts after every Some; within each group, original order holds.
    reranked.sort_by(|(ra, a), (rb, b)| match (b.rerank_score, a.rerank_score) {
        (Some(x), Some(y)) => x.cmp(&y).then(ra.cmp(rb)),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (None, None) => ra.cmp(rb),
    });
    Ok(reranked
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut c))| {
            c.rank = i + 1;
            c
        })
        .collect())
}

/// Accept an integer 0-10 anywhere in the reply (first integer token wins).
fn parse_rerank_score(reply: &str) -> Option<i64> {
    for token in reply.split(|c: char| !c.is_ascii_digit() && c != '-') {
        if token.is_empty() {
            continue;
        }
        if let Ok(v) = token.parse::<i64>() {
            if (0..=10).contains(&v) {
                return Some(v);
            }
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{snapshot_from_materials, Material, MaterialKind};
    use crate::gateway::{script_mock, FallbackMode, MockMatcher};
    use std::collections::BTreeMap;

    fn material(id: &str, text: &str) -> Material {
        Material {
            id: id.into(),
            text: text.into(),
            kind: MaterialKind::News,
            source: String::new(),
            published_at: None,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn tokenize_lowercases_word_runs() {
        assert_eq!(tokenize("Loan Rates"), ["loan", "rates"]);
    }

    #[test]
    fn tokenize_cjk_bigrams() {
        // Enumerated by hand: 4-char run -> 3 overlapping bigrams.
        assert_eq!(tokenize("住房贷款"), ["住房", "房贷", "贷款"]);
    }

    #[test]
    fn tokenize_empty_is_empty() {
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_keeps_digit_runs_drops_punctuation() {
        assert_eq!(
            tokenize("GDP grew 8.5% in 2023!"),
            ["gdp", "grew", "8", "5", "in", "2023"]
        );
    }

    #[test]
    fn tokenize_mixed_scripts() {
        assert_eq!(tokenize("广州GDP增长"), ["广州", "gdp", "增长"]);
    }

    #[test]
    fn tokenize_single_cjk_char_survives() {
        assert_eq!(tokenize("政"), ["政"]);
    }

    #[test]
    fn index_postings_hand_count() {
        let snapshot = snapshot_from_materials(vec![material("d1", "a b a")]);
        let index = build_index(&snapshot).unwrap();
        assert_eq!(index.postings("a").unwrap(), &[(0, 2)]);
        assert_eq!(index.postings("b").unwrap(), &[(0, 1)]);
        assert_eq!(index.avg_doc_length(), 3.0);
        assert_eq!(index.doc_count(), 1);
    }

    #[test]
    fn identical_docs_identical_lengths() {
        let snapshot = snapshot_from_materials(vec![
            material("d1", "loan rates rise"),
            material("d2", "loan rates rise"),
        ]);
        let index = build_index(&snapshot).unwrap();
        assert_eq!(index.doc_count(), 2);
        assert_eq!(index.doc_length("d1"), index.doc_length("d2"));
    }

    #[test]
    fn rebuild_is_deterministic() {
        let snapshot = snapshot_from_materials(vec![
            material("d1", "housing loan policy"),
            material("d2", "market reaction not related"),
        ]);
        let a = build_index(&snapshot).unwrap();
        let b = build_index(&snapshot).unwrap();
        assert_eq!(a.doc_count(), b.doc_count());
        for token in ["housing", "loan", "policy", "market"] {
            assert_eq!(a.postings(token), b.postings(token));
        }
    }

    #[test]
    fn empty_snapshot_rejected() {
        let snapshot = snapshot_from_materials(vec![]);
        assert!(matches!(
            build_index(&snapshot).unwrap_err(),
            MatchError::EmptySnapshot
        ));
    }

    #[test]
    fn disjoint_vocabulary_query_hits_single_doc() {
        let vocab = [
            "alpha beta",
            "gamma delta",
            "epsilon zeta",
            "eta theta",
            "iota kappa",
            "lambda mu",
            "nu xi",
            "omicron pi",
            "rho sigma",
            "tau upsilon",
        ];
        let materials: Vec<Material> = vocab
            .iter()
            .enumerate()
            .map(|(i, text)| material(&format!("d{i}"), text))
            .collect();
        let snapshot = snapshot_from_materials(materials);
        let index = build_index(&snapshot).unwrap();
        let hits = match_events("omicron pi", &index, 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].material_id, "d7");
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn equal_scores_tie_break_by_ascending_id() {
        let snapshot = snapshot_from_materials(vec![
            material("b", "housing loan"),
            material("a", "housing loan"),
            material("c", "unrelated text entirely"),
        ]);
        let index = build_index(&snapshot).unwrap();
        let hits = match_events("housing loan", &index, 3).unwrap();
        assert_eq!(hits[0].material_id, "a");
        assert_eq!(hits[1].material_id, "b");
        assert_eq!(hits[0].score, hits[1].score);
        assert_eq!((hits[0].rank, hits[1].rank), (1, 2));
    }

    #[test]
    fn empty_query_is_unmatchable() {
        let snapshot = snapshot_from_materials(vec![material("d", "text")]);
        let index = build_index(&snapshot).unwrap();
        assert!(matches!(
            match_events("...!!!", &index, 3).unwrap_err(),
            MatchError::UnmatchableQuery
        ));
    }

    #[test]
    fn zero_score_candidates_excluded_by_default() {
        let snapshot = snapshot_from_materials(vec![
            material("d1", "housing loan"),
            material("d2", "stock market"),
        ]);
        let index = build_index(&snapshot).unwrap();
        let hits = match_events("housing", &index, 10).unwrap();
        assert_eq!(hits.len(), 1);
        let all = match_events_with(
            "housing",
            &index,
            10,
            MatchOptions {
                include_zero_scores: true,
            },
        )
        .unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].score, 0.0);
    }

    /// Brute-force BM25 over every document; the independent oracle for the
    /// ranking property. Kept deliberately simple: recomputes df and tf by
    /// scanning the snapshot, no inverted index involved.
    fn brute_force_rank(query: &str, snapshot: &CorpusSnapshot, k: usize) -> Vec<(String, f64)> {
        let query_tokens = tokenize(query);
        let docs: Vec<(String, Vec<String>)> = snapshot
            .materials()
            .iter()
            .map(|m| (m.id.clone(), tokenize(&m.text)))
            .collect();
        let n = docs.len() as f64;
        let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;

        let mut scored: Vec<(String, f64)> = docs
            .iter()
            .map(|(id, tokens)| {
                let mut score = 0.0;
                for q in &query_tokens {
                    let tf = tokens.iter().filter(|t| *t == q).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let df = docs
                        .iter()
                        .filter(|(_, dt)| dt.iter().any(|t| t == q))
                        .count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * tokens.len() as f64 / avg);
                    score += idf * (tf * (BM25_K1 + 1.0)) / (tf + norm);
                }
                (id.clone(), score)
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    #[test]
    fn five_doc_fixture_matches_brute_force() {
        let snapshot = snapshot_from_materials(vec![
            material("m1", "housing loan rates fall in guangzhou"),
            material("m2", "housing supply policy and loan terms"),
            material("m3", "electric vehicle subsidies announced"),
            material("m4", "loan growth slows amid housing loan demand"),
            material("m5", "bond market rallies on rate cut"),
        ]);
        let index = build_index(&snapshot).unwrap();
        let hits = match_events("housing loan", &index, 5).unwrap();
        let oracle = brute_force_rank("housing loan", &snapshot, 5);
        assert_eq!(hits.len(), oracle.len());
        for (hit, (id, score)) in hits.iter().zip(&oracle) {
            assert_eq!(&hit.material_id, id);
            assert_eq!(hit.score, *score, "scores must match exactly");
        }
    }

    fn lexical_candidates(ids: &[&str]) -> Vec<MatchedMaterial> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| MatchedMaterial {
                material_id: (*id).into(),
                score: 1.0 - i as f64 * 0.1,
                rank: i + 1,
                rerank_score: None,
            })
            .collect()
    }

    fn rerank_snapshot() -> CorpusSnapshot {
        snapshot_from_materials(vec![
            material("c1", "candidate one text"),
            material("c2", "candidate two text"),
            material("c3", "candidate three text"),
        ])
    }

    #[test]
    fn rerank_scripted_scores_reorder() {
        let backend: BackendHandle = script_mock(
            vec![
                (MockMatcher::Substring("candidate two".into()), "10".into()),
                (MockMatcher::Substring("candidate one".into()), "1".into()),
            ],
            FallbackMode::Error,
        );
        let out = llm_rerank(
            "q",
            &lexical_candidates(&["c1", "c2"]),
            &rerank_snapshot(),
            &backend,
            Some(1),
        )
        .unwrap();
        assert_eq!(out[0].material_id, "c2");
        assert_eq!(out[0].rerank_score, Some(10));
        assert_eq!(out[1].material_id, "c1");
        assert_eq!(out.iter().map(|m| m.rank).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn rerank_all_unparsable_keeps_lexical_order() {
        let backend: BackendHandle = script_mock(
            vec![(
                MockMatcher::Substring("Candidate:".into()),
                "no idea".into(),
            )],
            FallbackMode::Error,
        );
        let out = llm_rerank(
            "q",
            &lexical_candidates(&["c1", "c2", "c3"]),
            &rerank_snapshot(),
            &backend,
            Some(1),
        )
        .unwrap();
        let ids: Vec<_> = out.iter().map(|m| m.material_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c2", "c3"]);
        assert!(out.iter().all(|m| m.rerank_score.is_none()));
    }

    #[test]
    fn rerank_mixed_parse_orders_scored_first() {
        // Enumerated by the sort rule: parsed (5) first, unparsed after,
        // in their original relative positions.
        let backend: BackendHandle = script_mock(
            vec![
                (
                    MockMatcher::Substring("candidate one".into()),
                    "gibberish".into(),
                ),
                (MockMatcher::Substring("candidate two".into()), "5".into()),
                (
                    MockMatcher::Substring("candidate three".into()),
                    "nope".into(),
                ),
            ],
            FallbackMode::Error,
        );
        let out = llm_rerank(
            "q",
            &lexical_candidates(&["c1", "c2", "c3"]),
            &rerank_snapshot(),
            &backend,
            Some(1),
        )
        .unwrap();
        let ids: Vec<_> = out.iter().map(|m| m.material_id.as_str()).collect();
        assert_eq!(ids, ["c2", "c1", "c3"]);
        assert_eq!(out[0].rerank_score, Some(5));
        assert_eq!(out[1].rerank_score, None);
    }

    #[test]
    fn rerank_empty_candidates_error() {
        let backend: BackendHandle = script_mock(vec![], FallbackMode::EchoHash);
        assert!(matches!(
            llm_rerank("q", &[], &rerank_snapshot(), &backend, None).unwrap_err(),
            MatchError::NoCandidates
        ));
    }

    #[test]
    fn rerank_score_out_of_range_is_unparsed() {
        assert_eq!(parse_rerank_score("11"), None);
        assert_eq!(parse_rerank_score("score: 7"), Some(7));
        assert_eq!(parse_rerank_score("0"), Some(0));
        assert_eq!(parse_rerank_score(""), None);
    }
}
