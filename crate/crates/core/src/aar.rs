//! Abductive augmentation: revise pseudo-labels through three staged
//! backend interactions.
//!
//! For each pool item a pseudo-labeler produces a preliminary label, then
//! three stages run in strict sequence: question generation over the label
//! (FAP), knowledge-grounded answering (FAE), and fusion of the
//! question-answer pairs into a revised label (FADOM). Domain knowledge is
//! injected into a stage's prompt iff that stage's flag is set in the
//! [`KnowledgeConfig`]; the eight flag combinations form the ablation grid.
//!
//! Stage failures reject the item (falling back to the pseudo-label) without
//! aborting the batch, and every prompt/reply lands in the item's trace.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::gateway::{
    builtin, digest_hex, template::bindings, BackendHandle, ChatRequest, GatewayError, Message,
    PromptTemplate,
};
use crate::keypoint::parse_structured_reply;
use crate::viewpoint::Label4;

/// Marker prefixed to knowledge text inside stage prompts; its presence is
/// what the gating tests scan for.
pub const KNOWLEDGE_MARKER: &str = "### DOMAIN KNOWLEDGE";

/// Questions beyond this cap are dropped to keep the answering prompt
/// inside budget.
pub const MAX_QUESTIONS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AarError {
    #[error("{stage}: no parsable content in reply: {raw:?}")]
    UnparsableReply { stage: &'static str, raw: String },
    #[error("{stage}: got {got} answers for {expected} questions after reprompt")]
    AnswerCountMismatch {
        stage: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{stage}: revised label failed {task} schema validation: {raw:?}")]
    SchemaInvalid {
        stage: &'static str,
        task: Task,
        raw: String,
    },
    #[error("knowledge base: {0}")]
    Knowledge(String),
    #[error("backend failure in {stage}: {source}")]
    Backend {
        stage: &'static str,
        source: GatewayError,
    },
    #[error(transparent)]
    Template(#[from] crate::gateway::TemplateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The three financial subtasks whose labels get augmented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "EMA")]
    Ema,
    #[serde(rename = "VQE")]
    Vqe,
    #[serde(rename = "KPE")]
    Kpe,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Ema => "EMA",
            Task::Vqe => "VQE",
            Task::Kpe => "KPE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EMA" => Some(Task::Ema),
            "VQE" => Some(Task::Vqe),
            "KPE" => Some(Task::Kpe),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Validate a label against its task schema: EMA labels are material-id
/// lists, VQE labels quality classes, KPE labels parsable key-point records.
pub fn validate_label(task: Task, label: &str) -> bool {
    let label = label.trim();
    if label.is_empty() {
        return false;
    }
    match task {
        Task::Ema => label
            .split([',', ';', '\n'])
            .any(|id| !id.trim().is_empty()),
        Task::Vqe => {
            let lower = label.to_ascii_lowercase();
            Label4::parse(&lower).is_some() || lower == "bad"
        }
        Task::Kpe => parse_structured_reply(label).is_ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub topic: String,
    pub text: String,
}

/// Domain expert knowledge, one entry per topic line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBase {
    pub fn new(entries: Vec<KnowledgeEntry>) -> Result<Self, AarError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.text.trim().is_empty() {
                return Err(AarError::Knowledge(format!(
                    "entry {} has empty text",
                    e.id
                )));
            }
            if !seen.insert(e.id.clone()) {
                return Err(AarError::Knowledge(format!("duplicate entry id {}", e.id)));
            }
        }
        Ok(Self { entries })
    }

    /// Load from JSONL of `{"id","topic","text"}`.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, AarError> {
        let content = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: KnowledgeEntry = serde_json::from_str(line)
                .map_err(|e| AarError::Knowledge(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    /// All entries whose topic matches the task name (case-insensitive),
    /// concatenated in file order. None when nothing matches.
    pub fn for_task(&self, task: Task) -> Option<String> {
        let texts: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| e.topic.eq_ignore_ascii_case(task.name()))
            .map(|e| e.text.as_str())
            .collect();
        if texts.is_empty() {
            None
        } else {
            Some(texts.join("\n"))
        }
    }
}

/// Per-stage knowledge toggles; the eight combinations are the ablation
/// grid (no / fap / fae / fadom / fap+fae / fap+fadom / fae+fadom / all).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeConfig {
    pub fap_enabled: bool,
    pub fae_enabled: bool,
    pub fadom_enabled: bool,
}

impl KnowledgeConfig {
    pub const NONE: Self = Self {
        fap_enabled: false,
        fae_enabled: false,
        fadom_enabled: false,
    };

    pub const ALL: Self = Self {
        fap_enabled: true,
        fae_enabled: true,
        fadom_enabled: true,
    };

    /// Parse a grid label: `all`, `no`, or a `+`-joined subset of
    /// `fap`/`fae`/`fadom` in any order.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => return Some(Self::ALL),
            "no" | "none" => return Some(Self::NONE),
            _ => {}
        }
        let mut config = Self::NONE;
        for part in s.split('+') {
            match part.trim().to_ascii_lowercase().as_str() {
                "fap" => config.fap_enabled = true,
                "fae" => config.fae_enabled = true,
                "fadom" => config.fadom_enabled = true,
                _ => return None,
            }
        }
        Some(config)
    }

    /// Canonical grid label.
    pub fn label(&self) -> String {
        match (self.fap_enabled, self.fae_enabled, self.fadom_enabled) {
            (false, false, false) => "no".into(),
            (true, true, true) => "all".into(),
            (f, e, d) => {
                let mut parts = Vec::new();
                if f {
                    parts.push("fap");
                }
                if e {
                    parts.push("fae");
                }
                if d {
                    parts.push("fadom");
                }
                parts.join("+")
            }
        }
    }

    /// The full ablation grid in table order.
    pub fn grid() -> [Self; 8] {
        let c = |f, e, d| Self {
            fap_enabled: f,
            fae_enabled: e,
            fadom_enabled: d,
        };
        [
            c(false, false, false),
            c(true, false, false),
            c(false, true, false),
            c(false, false, true),
            c(true, true, false),
            c(true, false, true),
            c(false, true, true),
            c(true, true, true),
        ]
    }
}

/// One augmentation trajectory. For rejected items `revised_label` falls
/// back to the pseudo-label and the earlier stage fields may be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub task: Task,
    pub input_text: String,
    pub pseudo_label: String,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
    pub revised_label: String,
    pub config: KnowledgeConfig,
    pub backend_name: String,
    pub trace_id: String,
    pub rejected: bool,
}

/// Prompt/reply log for one stage of one item.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub prompts: Vec<String>,
    pub replies: Vec<String>,
}

/// Full trace of one augmentation item, keyed by the record's trace id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemTrace {
    pub trace_id: String,
    pub stages: Vec<StageLog>,
    pub rejected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ItemTrace {
    /// Prompts logged for one stage, used by the gating checks.
    pub fn prompts_for(&self, stage: &str) -> Vec<&str> {
        self.stages
            .iter()
            .filter(|s| s.stage == stage)
            .flat_map(|s| s.prompts.iter().map(String::as_str))
            .collect()
    }
}

/// Stage output together with its prompt/reply log.
#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    pub value: T,
    pub log: StageLog,
}

fn knowledge_binding(kb: Option<&KnowledgeBase>, task: Task) -> String {
    match kb.and_then(|k| k.for_task(task)) {
        Some(text) => format!("{KNOWLEDGE_MARKER}\n{text}\n"),
        None => String::new(),
    }
}

fn complete_logged(
    backend: &BackendHandle,
    request: &ChatRequest,
    stage: &'static str,
    log: &mut StageLog,
) -> Result<String, AarError> {
    log.prompts.push(request.canonical_prompt());
    let reply = backend
        .complete(request)
        .map_err(|source| AarError::Backend { stage, source })?;
    log.replies.push(reply.content.clone());
    Ok(reply.content)
}

/// Parse a numbered list (`1. text`, `2) text`, ...) into its items.
fn parse_numbered(reply: &str) -> Vec<String> {
    let mut items = Vec::new();
    for line in reply.lines() {
        let trimmed = line.trim();
        let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let rest = &trimmed[digits.len()..];
        let rest = rest.trim_start_matches(['.', ')', ':', '、']).trim();
        items.push(rest.to_string());
    }
    items
}

fn render_stage(
    template: &PromptTemplate,
    binds: &std::collections::BTreeMap<String, String>,
) -> Result<String, AarError> {
    Ok(template.render(binds, 0)?)
}

/// FAP: generate up to [`MAX_QUESTIONS`] numbered analysis questions about
/// the pseudo-label. Knowledge enters the prompt iff `kb` is supplied.
pub fn fap_generate_questions(
    input_text: &str,
    pseudo_label: &str,
    kb: Option<&KnowledgeBase>,
    task: Task,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<StageOutcome<Vec<String>>, AarError> {
    let mut log = StageLog {
        stage: "fap".into(),
        ..Default::default()
    };
    let prompt = render_stage(
        &builtin::fap_questions(),
        &bindings([
            ("knowledge", knowledge_binding(kb, task)),
            ("input", input_text.to_string()),
            ("pseudo_label", pseudo_label.to_string()),
        ]),
    )?;
    let reply = complete_logged(backend, &ChatRequest::simple(prompt, seed), "fap", &mut log)?;
    let mut questions: Vec<String> = parse_numbered(&reply)
        .into_iter()
        .filter(|q| !q.is_empty())
        .collect();
    if questions.is_empty() {
        return Err(AarError::UnparsableReply {
            stage: "fap",
            raw: reply,
        });
    }
    questions.truncate(MAX_QUESTIONS);
    Ok(StageOutcome {
        value: questions,
        log,
    })
}

/// FAE: answer each question, order-aligned. Parsed-but-empty answer slots
/// become the literal marker `UNANSWERED`; a short answer list triggers one
/// reprompt before failing.
pub fn fae_answer(
    input_text: &str,
    pseudo_label: &str,
    questions: &[String],
    kb: Option<&KnowledgeBase>,
    task: Task,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<StageOutcome<Vec<String>>, AarError> {
    let mut log = StageLog {
        stage: "fae".into(),
        ..Default::default()
    };
    let numbered: String = questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render_stage(
        &builtin::fae_answers(),
        &bindings([
            ("knowledge", knowledge_binding(kb, task)),
            ("input", input_text.to_string()),
            ("pseudo_label", pseudo_label.to_string()),
            ("questions", numbered),
        ]),
    )?;
    let mut request = ChatRequest::simple(prompt, seed);
    let reply = complete_logged(backend, &request, "fae", &mut log)?;
    let mut answers = normalize_answers(parse_numbered(&reply));

    if answers.len() < questions.len() {
        request
            .messages
            .push(Message::user(builtin::STRICT_RETRY_NOTE));
        let retry = complete_logged(backend, &request, "fae", &mut log)?;
        answers = normalize_answers(parse_numbered(&retry));
        if answers.len() < questions.len() {
            return Err(AarError::AnswerCountMismatch {
                stage: "fae",
                expected: questions.len(),
                got: answers.len(),
            });
        }
    }
    answers.truncate(questions.len());
    Ok(StageOutcome {
        value: answers,
        log,
    })
}

fn normalize_answers(parsed: Vec<String>) -> Vec<String> {
    parsed
        .into_iter()
        .map(|a| {
            if a.is_empty() {
                "UNANSWERED".to_string()
            } else {
                a
            }
        })
        .collect()
}

/// FADOM: fuse pseudo-label and question-answer pairs into a revised label,
/// validated against the task schema. One reprompt; the caller falls back
/// to the pseudo-label when the second reply is still schema-invalid.
pub fn fadom_fuse(
    input_text: &str,
    pseudo_label: &str,
    qa_pairs: &[(String, String)],
    kb: Option<&KnowledgeBase>,
    task: Task,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Result<StageOutcome<String>, AarError> {
    let mut log = StageLog {
        stage: "fadom".into(),
        ..Default::default()
    };
    let qa: String = qa_pairs
        .iter()
        .enumerate()
        .map(|(i, (q, a))| format!("Q{}: {q}\nA{}: {a}", i + 1, i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render_stage(
        &builtin::fadom_fuse(),
        &bindings([
            ("knowledge", knowledge_binding(kb, task)),
            ("input", input_text.to_string()),
            ("pseudo_label", pseudo_label.to_string()),
            ("qa", qa),
        ]),
    )?;
    let mut request = ChatRequest::simple(prompt, seed);
    let reply = complete_logged(backend, &request, "fadom", &mut log)?;
    let candidate = reply.trim().to_string();
    if validate_label(task, &candidate) {
        return Ok(StageOutcome {
            value: candidate,
            log,
        });
    }
    request
        .messages
        .push(Message::user(builtin::STRICT_RETRY_NOTE));
    let retry = complete_logged(backend, &request, "fadom", &mut log)?;
    let candidate = retry.trim().to_string();
    if validate_label(task, &candidate) {
        Ok(StageOutcome {
            value: candidate,
            log,
        })
    } else {
        Err(AarError::SchemaInvalid {
            stage: "fadom",
            task,
            raw: candidate,
        })
    }
}

/// The fledgling-model stand-in: any backend plus the per-task label
/// template. Direct-annotation baselines use the same machinery with the
/// augmentation stages disabled.
pub struct PseudoLabeler {
    backend: BackendHandle,
    shots: usize,
}

impl PseudoLabeler {
    pub fn new(backend: BackendHandle) -> Self {
        Self { backend, shots: 0 }
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots = shots;
        self
    }

    pub fn label(
        &self,
        task: Task,
        input_text: &str,
        seed: Option<u64>,
    ) -> Result<StageOutcome<String>, AarError> {
        let mut log = StageLog {
            stage: "label".into(),
            ..Default::default()
        };
        let template = builtin::pseudo_label(task.name());
        let prompt = template.render(&bindings([("input", input_text.to_string())]), self.shots)?;
        let reply = complete_logged(
            &self.backend,
            &ChatRequest::simple(prompt, seed),
            "label",
            &mut log,
        )?;
        Ok(StageOutcome {
            value: reply.trim().to_string(),
            log,
        })
    }
}

/// Augment one item: label, question, answer, fuse. Any stage failure turns
/// into a rejected record carrying the pseudo-label (empty if labeling
/// itself failed) and the error message in the trace.
#[allow(clippy::too_many_arguments)]
pub fn augment_one(
    task: Task,
    input_text: &str,
    labeler: &PseudoLabeler,
    kb: Option<&KnowledgeBase>,
    config: KnowledgeConfig,
    backend: &BackendHandle,
    seed: Option<u64>,
    trace_id: String,
) -> (AugmentationRecord, ItemTrace) {
    let mut trace = ItemTrace {
        trace_id: trace_id.clone(),
        ..Default::default()
    };
    let mut record = AugmentationRecord {
        task,
        input_text: input_text.to_string(),
        pseudo_label: String::new(),
        questions: Vec::new(),
        answers: Vec::new(),
        revised_label: String::new(),
        config,
        backend_name: backend.name().to_string(),
        trace_id,
        rejected: false,
    };

    let mut run = || -> Result<(), AarError> {
        let labeled = labeler.label(task, input_text, seed)?;
        trace.stages.push(labeled.log.clone());
        record.pseudo_label = labeled.value.clone();
        record.revised_label = labeled.value.clone();

        let fap_kb = if config.fap_enabled { kb } else { None };
        let questions = fap_generate_questions(
            input_text,
            &record.pseudo_label,
            fap_kb,
            task,
            backend,
            seed,
        )?;
        trace.stages.push(questions.log.clone());
        record.questions = questions.value.clone();

        let fae_kb = if config.fae_enabled { kb } else { None };
        let answers = fae_answer(
            input_text,
            &record.pseudo_label,
            &record.questions,
            fae_kb,
            task,
            backend,
            seed,
        )?;
        trace.stages.push(answers.log.clone());
        record.answers = answers.value.clone();

        let qa: Vec<(String, String)> = record
            .questions
            .iter()
            .cloned()
            .zip(record.answers.iter().cloned())
            .collect();
        let fadom_kb = if config.fadom_enabled { kb } else { None };
        let fused = fadom_fuse(
            input_text,
            &record.pseudo_label,
            &qa,
            fadom_kb,
            task,
            backend,
            seed,
        )?;
        trace.stages.push(fused.log.clone());
        record.revised_label = fused.value;
        Ok(())
    };

    if let Err(e) = run() {
        record.rejected = true;
        record.revised_label = record.pseudo_label.clone();
        trace.rejected = true;
        trace.error = Some(e.to_string());
    }
    (record, trace)
}

/// Run the augmentation loop over a pool. Items are independent and may run
/// in parallel; output order equals pool order and one item's failure never
/// touches the others.
pub fn augment_dataset(
    pool: &[(Task, String)],
    labeler: &PseudoLabeler,
    kb: Option<&KnowledgeBase>,
    config: KnowledgeConfig,
    backend: &BackendHandle,
    seed: Option<u64>,
) -> Vec<(AugmentationRecord, ItemTrace)> {
    let jobs: Vec<(usize, Task, String)> = pool
        .iter()
        .enumerate()
        .map(|(i, (t, input))| (i, *t, input.clone()))
        .collect();
    exec::map_ordered(jobs, |(index, task, input)| {
        let trace_id = format!(
            "t-{}",
            &digest_hex(&format!(
                "{}\x1f{index}\x1f{}\x1f{input}",
                seed.unwrap_or(0),
                task.name()
            ))[..12]
        );
        augment_one(task, &input, labeler, kb, config, backend, seed, trace_id)
    })
}
