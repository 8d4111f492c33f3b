//! Structured key-point extraction.
//!
//! The backend replies in a tolerant field-tagged plain-text schema
//! (`INDUSTRY: ... | INDICATORS: a; b | PERSPECTIVES: ... | SENTIMENT: ...`)
//! chosen over nested markup because weak backends produce it far more
//! reliably. The parser accepts case-insensitive field names, `|` or newline
//! separators, and `;` or `,` list delimiters; unknown fields land in
//! `extras`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::{
    builtin, template::bindings, BackendHandle, ChatRequest, GatewayError, Message,
};
use crate::viewpoint::ViewpointSelection;

#[derive(Debug, thiserror::Error)]
pub enum KeypointError {
    #[error("unparsable key-point reply: missing field(s) {missing:?}; raw reply: {raw:?}")]
    Parse { missing: Vec<String>, raw: String },
    #[error("backend failure: {0}")]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] crate::gateway::TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
    Mixed,
}

impl Sentiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Some(Sentiment::Positive),
            "negative" => Some(Sentiment::Negative),
            "neutral" => Some(Sentiment::Neutral),
            "mixed" => Some(Sentiment::Mixed),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The structured record steering final generation. Lists are deduplicated
/// and order-preserving; extras hold unknown fields keyed lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPointRecord {
    pub industry: String,
    #[serde(default)]
    pub indicators: Vec<String>,
    #[serde(default)]
    pub perspectives: Vec<String>,
    pub sentiment: Sentiment,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
}

fn dedup_preserving(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .filter(|x| seen.insert(x.clone()))
        .collect()
}

fn split_list(value: &str) -> Vec<String> {
    dedup_preserving(
        value
            .split([';', ','])
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

/// Parse the field-tagged reply format. `industry` and `sentiment` are
/// required; a missing or invalid one fails with the missing field names.
pub fn parse_structured_reply(raw: &str) -> Result<KeyPointRecord, KeypointError> {
    let mut industry: Option<String> = None;
    let mut indicators = Vec::new();
    let mut perspectives = Vec::new();
    let mut sentiment: Option<Sentiment> = None;
    let mut extras = BTreeMap::new();

    for segment in raw.split(['|', '\n']) {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        let Some((name, value)) = segment.split_once(':') else {
            continue;
        };
        let name = name.trim().to_ascii_lowercase();
        let value = value.trim();
        match name.as_str() {
            "industry" => {
                if !value.is_empty() {
                    industry = Some(value.to_string());
                }
            }
            "indicators" => indicators = split_list(value),
            "perspectives" => perspectives = split_list(value),
            "sentiment" => sentiment = Sentiment::parse(value),
            _ => {
                extras.insert(name, value.to_string());
            }
        }
    }

    let mut missing = Vec::new();
    if industry.is_none() {
        missing.push("industry".to_string());
    }
    if sentiment.is_none() {
        missing.push("sentiment".to_string());
    }
    if !missing.is_empty() {
        return Err(KeypointError::Parse {
            missing,
            raw: raw.to_string(),
        });
    }

    Ok(KeyPointRecord {
        industry: industry.unwrap(),
        indicators,
        perspectives,
        sentiment: sentiment.unwrap(),
        extras,
    })
}

/// Serialize back into the field-tagged format the parser accepts;
/// `parse_structured_reply(serialize_record(r)) == r` for records whose
/// values stay clear of the delimiter characters.
pub fn serialize_record(record: &KeyPointRecord) -> String {
    let mut out = format!(
        "INDUSTRY: {} | INDICATORS: {} | PERSPECTIVES: {} | SENTIMENT: {}",
        record.industry,
        record.indicators.join("; "),
        record.perspectives.join("; "),
        record.sentiment
    );
    for (k, v) in &record.extras {
        out.push_str(&format!(" | {}: {}", k.to_uppercase(), v));
    }
    out
}

fn selection_digest(selection: &ViewpointSelection) -> String {
    if selection.selected.is_empty() {
        return "(no viewpoints selected)".to_string();
    }
    selection
        .selected
        .iter()
        .map(|v| format!("- {}", v.sentence))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extract a key-point record from the input plus selected viewpoints.
/// One schema-repair reprompt on parse failure, then the error surfaces
/// with the raw reply.
pub fn extract_keypoints(
    input_text: &str,
    selection: &ViewpointSelection,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<KeyPointRecord, KeypointError> {
    let template = builtin::keypoint_extract();
    let prompt = template.render(
        &bindings([
            ("input", input_text.to_string()),
            ("viewpoints", selection_digest(selection)),
        ]),
        0,
    )?;
    let mut request = ChatRequest::simple(prompt, seed);
    let reply = backend.complete(&request)?;
    match parse_structured_reply(&reply.content) {
        Ok(record) => Ok(record),
        Err(_) => {
            request
                .messages
                .push(Message::user(builtin::STRICT_RETRY_NOTE));
            let retry = backend.complete(&request)?;
            parse_structured_reply(&retry.content)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{script_mock, FallbackMode, MockMatcher};

    const CANONICAL: &str = "INDUSTRY: real estate | INDICATORS: loan volume; down payment | PERSPECTIVES: policy easing | SENTIMENT: positive";

    fn canonical_record() -> KeyPointRecord {
        KeyPointRecord {
            industry: "real estate".into(),
            indicators: vec!["loan volume".into(), "down payment".into()],
            perspectives: vec!["policy easing".into()],
            sentiment: Sentiment::Positive,
            extras: BTreeMap::new(),
        }
    }

    #[test]
    fn parses_canonical_reply() {
        let record = parse_structured_reply(CANONICAL).unwrap();
        assert_eq!(record, canonical_record());
        assert_eq!(record.indicators.len(), 2);
    }

    #[test]
    fn duplicate_indicator_kept_once() {
        let record = parse_structured_reply(
            "INDUSTRY: x | INDICATORS: loan volume; loan volume | SENTIMENT: neutral",
        )
        .unwrap();
        assert_eq!(record.indicators, ["loan volume"]);
    }

    #[test]
    fn lowercase_field_names_parse_identically() {
        let upper = parse_structured_reply(CANONICAL).unwrap();
        let lower = parse_structured_reply(
            "industry: real estate | indicators: loan volume; down payment | perspectives: policy easing | sentiment: positive",
        )
        .unwrap();
        assert_eq!(upper, lower);
    }

    #[test]
    fn unknown_field_lands_in_extras() {
        let record = parse_structured_reply("INDUSTRY: x | SENTIMENT: mixed | FOO: bar").unwrap();
        assert_eq!(record.extras.get("foo").map(String::as_str), Some("bar"));
    }

    #[test]
    fn missing_fields_named_in_error() {
        let err = parse_structured_reply("INDICATORS: a; b").unwrap_err();
        match err {
            KeypointError::Parse { missing, .. } => {
                assert_eq!(missing, ["industry", "sentiment"]);
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn delimiter_permutations_parse_to_same_record() {
        // Ten syntactic variants of the canonical record.
        let variants = [
            CANONICAL.to_string(),
            "industry: real estate | indicators: loan volume; down payment | perspectives: policy easing | sentiment: positive".to_string(),
            "INDUSTRY: real estate\nINDICATORS: loan volume; down payment\nPERSPECTIVES: policy easing\nSENTIMENT: positive".to_string(),
            "INDUSTRY: real estate\nINDICATORS: loan volume, down payment\nPERSPECTIVES: policy easing\nSENTIMENT: positive".to_string(),
            "INDUSTRY: real estate | INDICATORS: loan volume, down payment | PERSPECTIVES: policy easing | SENTIMENT: positive".to_string(),
            "Industry: real estate | Indicators: loan volume ;  down payment | Perspectives: policy easing | Sentiment: POSITIVE".to_string(),
            "INDUSTRY:   real estate   |   INDICATORS: loan volume;down payment|PERSPECTIVES: policy easing|SENTIMENT: positive".to_string(),
            "SENTIMENT: positive | PERSPECTIVES: policy easing | INDICATORS: loan volume; down payment | INDUSTRY: real estate".to_string(),
            "INDUSTRY: real estate\n\nINDICATORS: loan volume; down payment\n\nPERSPECTIVES: policy easing\nSENTIMENT: positive".to_string(),
            "industry: real estate\nINDICATORS: loan volume, down payment | PERSPECTIVES: policy easing\nsentiment: Positive".to_string(),
        ];
        let expected = canonical_record();
        for (i, v) in variants.iter().enumerate() {
            let got =
                parse_structured_reply(v).unwrap_or_else(|e| panic!("variant {i} failed: {e}"));
            assert_eq!(got, expected, "variant {i} diverged");
        }
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let mut record = canonical_record();
        record.extras.insert("horizon".into(), "mid-term".into());
        let serialized = serialize_record(&record);
        let back = parse_structured_reply(&serialized).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn empty_lists_round_trip() {
        let record = KeyPointRecord {
            industry: "banking".into(),
            indicators: vec![],
            perspectives: vec![],
            sentiment: Sentiment::Negative,
            extras: BTreeMap::new(),
        };
        let back = parse_structured_reply(&serialize_record(&record)).unwrap();
        assert_eq!(back, record);
    }

    fn empty_selection() -> ViewpointSelection {
        ViewpointSelection {
            selected: vec![],
            total_chars: 0,
            budget_chars: 1000,
        }
    }

    #[test]
    fn extraction_from_scripted_backend() {
        let backend = script_mock(
            vec![(
                MockMatcher::Substring("Extract the key points".into()),
                CANONICAL.into(),
            )],
            FallbackMode::Error,
        );
        let record =
            extract_keypoints("some policy", &empty_selection(), &backend, Some(1)).unwrap();
        assert_eq!(record, canonical_record());
    }

    #[test]
    fn extraction_is_idempotent_across_calls() {
        let backend = script_mock(
            vec![(
                MockMatcher::Substring("Extract the key points".into()),
                "INDUSTRY: x | INDICATORS: a; a; b | SENTIMENT: mixed".into(),
            )],
            FallbackMode::Error,
        );
        let a = extract_keypoints("in", &empty_selection(), &backend, Some(1)).unwrap();
        let b = extract_keypoints("in", &empty_selection(), &backend, Some(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indicators, ["a", "b"]);
    }

    #[test]
    fn schema_repair_reprompt_honored() {
        // First reply misses SENTIMENT; the reprompt (carrying the strict
        // note) returns a complete record.
        let backend = script_mock(
            vec![
                (
                    MockMatcher::Substring(builtin::STRICT_RETRY_NOTE.into()),
                    CANONICAL.into(),
                ),
                (
                    MockMatcher::Substring("Extract the key points".into()),
                    "INDUSTRY: real estate | INDICATORS: loan volume".into(),
                ),
            ],
            FallbackMode::Error,
        );
        let record = extract_keypoints("in", &empty_selection(), &backend, Some(1)).unwrap();
        assert_eq!(record, canonical_record());
    }

    #[test]
    fn failing_twice_surfaces_raw_reply() {
        let backend = script_mock(
            vec![(
                MockMatcher::Substring("Extract".into()),
                "no structure here".into(),
            )],
            FallbackMode::Error,
        );
        let err = extract_keypoints("in", &empty_selection(), &backend, Some(1)).unwrap_err();
        match err {
            KeypointError::Parse { raw, .. } => assert_eq!(raw, "no structure here"),
            other => panic!("expected Parse, got {other:?}"),
        }
    }
}
