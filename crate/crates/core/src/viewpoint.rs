//! Viewpoint quality evaluation: sentence segmentation, backend scoring,
//! and budgeted selection of the most insightful sentences.

use serde::{Deserialize, Serialize};

use crate::gateway::{
    builtin, template::bindings, BackendHandle, ChatRequest, GatewayError, Message,
};

#[derive(Debug, thiserror::Error)]
pub enum ViewpointError {
    #[error("unparsable viewpoint reply after reprompt; raw reply: {raw:?}")]
    Parse { raw: String },
    #[error("backend failure: {0}")]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] crate::gateway::TemplateError),
}

/// Four-class quality label, ordered best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label4 {
    Excellent,
    Good,
    Fair,
    Poor,
}

impl Label4 {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "excellent" => Some(Label4::Excellent),
            "good" => Some(Label4::Good),
            "fair" => Some(Label4::Fair),
            "poor" => Some(Label4::Poor),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label4::Excellent => "excellent",
            Label4::Good => "good",
            Label4::Fair => "fair",
            Label4::Poor => "poor",
        }
    }
}

/// Binary quality label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label2 {
    Good,
    Bad,
}

impl Label2 {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label2::Good => "good",
            Label2::Bad => "bad",
        }
    }
}

/// The fixed 4-to-2 class collapse: {excellent, good} -> good, else bad.
pub fn collapse(label: Label4) -> Label2 {
    match label {
        Label4::Excellent | Label4::Good => Label2::Good,
        Label4::Fair | Label4::Poor => Label2::Bad,
    }
}

/// A scored sentence. `label2` is always the collapse of `label4` and
/// `score` is normalized to [0, 1]; both are enforced at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub material_id: String,
    pub sentence: String,
    pub label4: Label4,
    pub label2: Label2,
    pub score: f64,
}

impl Viewpoint {
    pub fn new(
        material_id: impl Into<String>,
        sentence: impl Into<String>,
        label4: Label4,
        score: f64,
    ) -> Self {
        Self {
            material_id: material_id.into(),
            sentence: sentence.into(),
            label4,
            label2: collapse(label4),
            score: score.clamp(0.0, 1.0),
        }
    }
}

/// Sentences chosen under a character budget, ordered by score descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSelection {
    pub selected: Vec<Viewpoint>,
    pub total_chars: usize,
    pub budget_chars: usize,
}

const TERMINATORS: [char; 6] = ['.', '!', '?', '。', '！', '？'];
const CARRY_OVER: [char; 8] = ['"', '\'', '”', '’', '」', '』', '）', ')'];

/// Split text on sentence terminators (ASCII and CJK), attaching closing
/// quotes/brackets to the sentence they end. The concatenation of the
/// returned sentences preserves every non-whitespace character of the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        current.push(c);
        if TERMINATORS.contains(&c) {
            // Keep contiguous terminators ("?!", "...") together, then any
            // closing quotes/brackets.
            while i + 1 < chars.len() && TERMINATORS.contains(&chars[i + 1]) {
                i += 1;
                current.push(chars[i]);
            }
            while i + 1 < chars.len() && CARRY_OVER.contains(&chars[i + 1]) {
                i += 1;
                current.push(chars[i]);
            }
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        }
        i += 1;
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

/// Parse a scoring reply: a quality label plus an integer 0-100 anywhere in
/// the text, e.g. "excellent 90".
fn parse_score_reply(reply: &str) -> Option<(Label4, f64)> {
    let mut label = None;
    let mut score = None;
    for token in reply.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        if label.is_none() {
            if let Some(l) = Label4::parse(token) {
                label = Some(l);
                continue;
            }
        }
        if score.is_none() {
            if let Ok(v) = token.parse::<u32>() {
                if v <= 100 {
                    score = Some(v as f64 / 100.0);
                }
            }
        }
    }
    match (label, score) {
        (Some(l), Some(s)) => Some((l, s)),
        _ => None,
    }
}

/// Score one sentence with the backend. On an unparsable reply the stage
/// reprompts once with a stricter format note; a second failure surfaces a
/// `Parse` error carrying the raw reply.
pub fn score_viewpoint(
    material_id: &str,
    sentence: &str,
    context: &str,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<Viewpoint, ViewpointError> {
    let template = builtin::viewpoint_score();
    let prompt = template.render(
        &bindings([
            ("sentence", sentence.to_string()),
            ("context", context.to_string()),
        ]),
        0,
    )?;
    let mut request = ChatRequest::simple(prompt, seed);
    let reply = backend.complete(&request)?;
    if let Some((label, score)) = parse_score_reply(&reply.content) {
        return Ok(Viewpoint::new(material_id, sentence, label, score));
    }
    request
        .messages
        .push(Message::user(builtin::STRICT_RETRY_NOTE));
    let retry = backend.complete(&request)?;
    match parse_score_reply(&retry.content) {
        Some((label, score)) => Ok(Viewpoint::new(material_id, sentence, label, score)),
        None => Err(ViewpointError::Parse { raw: retry.content }),
    }
}

/// Filter to `label4 >= min_label4`, sort by score descending (stable on
/// ties), then greedily take the sorted prefix that fits the character
/// budget. Selection stops at the first sentence that would overflow, so the
/// result is always a prefix of the sorted qualifying list.
pub fn select_insightful(
    viewpoints: &[Viewpoint],
    min_label4: Label4,
    budget_chars: usize,
) -> ViewpointSelection {
    let mut qualifying: Vec<&Viewpoint> = viewpoints
        .iter()
        .filter(|v| v.label4 <= min_label4) // Label4 orders best-first
        .collect();
    qualifying.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores are finite"));

    let mut selected = Vec::new();
    let mut total_chars = 0usize;
    for v in qualifying {
        let len = v.sentence.chars().count();
        if total_chars + len > budget_chars {
            break;
        }
        total_chars += len;
        selected.push(v.clone());
    }
    ViewpointSelection {
        selected,
        total_chars,
        budget_chars,
    }
}
