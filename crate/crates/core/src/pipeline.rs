//! End-to-end orchestration of the five-step workflow.
//!
//! Step 1 matches the input against the corpus, step 2 scores and selects
//! viewpoints, step 3 extracts key points, step 4 assembles the final
//! prompt, and step 5 generates the analysis. The [`PipelineMode`] ablations
//! gate steps 2 and 3; `raw_baseline` skips both and dumps the raw matched
//! texts into the prompt.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSnapshot;
use crate::exec;
use crate::gateway::{
    builtin, digest_hex, template::bindings, Backend, BackendHandle, ChatRequest, Exchange,
    PromptTemplate, RecordingBackend,
};
use crate::keypoint::{extract_keypoints, serialize_record, KeyPointRecord};
use crate::matcher::{llm_rerank, match_events, InvertedIndex, MatchedMaterial};
use crate::viewpoint::{
    score_viewpoint, select_insightful, split_sentences, Label4, Viewpoint, ViewpointSelection,
};

pub const SECTION_INPUT: &str = "### INPUT";
pub const SECTION_MATERIALS: &str = "### MATERIALS";
pub const SECTION_VIEWPOINTS: &str = "### VIEWPOINTS";
pub const SECTION_KEYPOINTS: &str = "### KEYPOINTS";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("assembled prompt is {len} chars, over the {cap} cap even with all materials dropped")]
    PromptOverCap { len: usize, cap: usize },
    #[error("bundle violates mode invariants: {0}")]
    InvalidBundle(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// Which subtask outputs feed the final prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    RawBaseline,
    Fllm1,
    Fllm12,
    Fllm123,
}

impl PipelineMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw_baseline" | "raw" => Some(Self::RawBaseline),
            "fllm_1" => Some(Self::Fllm1),
            "fllm_12" => Some(Self::Fllm12),
            "fllm_123" => Some(Self::Fllm123),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RawBaseline => "raw_baseline",
            Self::Fllm1 => "fllm_1",
            Self::Fllm12 => "fllm_12",
            Self::Fllm123 => "fllm_123",
        }
    }

    pub fn includes_viewpoints(&self) -> bool {
        matches!(self, Self::Fllm12 | Self::Fllm123)
    }

    pub fn includes_keypoints(&self) -> bool {
        matches!(self, Self::Fllm123)
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A retrieval hit joined with its material text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedWithText {
    #[serde(flatten)]
    pub matched: MatchedMaterial,
    pub text: String,
}

/// Everything step 4 needs. `selection` is present iff the mode ran step 2,
/// `keypoints` iff step 3; `raw_baseline` carries the raw matched texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub input_text: String,
    pub matched: Vec<MatchedWithText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<ViewpointSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<KeyPointRecord>,
    pub mode: PipelineMode,
}

impl PromptBundle {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.selection.is_some() != self.mode.includes_viewpoints() {
            return Err(PipelineError::InvalidBundle(format!(
                "selection presence does not match mode {}",
                self.mode
            )));
        }
        if self.keypoints.is_some() != self.mode.includes_keypoints() {
            return Err(PipelineError::InvalidBundle(format!(
                "keypoints presence does not match mode {}",
                self.mode
            )));
        }
        Ok(())
    }
}

/// The persisted result of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub run_id: String,
    pub input_text: String,
    pub final_prompt: String,
    pub generated_analysis: String,
    pub mode: PipelineMode,
    pub stage_timings_ms: BTreeMap<String, u64>,
    pub backend_name: String,
}

/// Per-stage call counts, timings, and the full prompt/reply exchanges
/// (sorted by prompt within a stage, since calls may have run in parallel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub backend_calls: u64,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
}

/// Analysis output plus the full bundle and stage trace; one JSON document
/// per run on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub output: AnalysisOutput,
    pub bundle: PromptBundle,
    pub stages: Vec<StageTrace>,
}

/// A failed run: which stage broke and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub input_text: String,
    pub mode: PipelineMode,
    pub stage: String,
    pub message: String,
}

pub type RunOutcome = Result<Box<RunRecord>, FailedRun>;

/// Which matched materials feed viewpoint scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewpointSource {
    /// Only the top `viewpoint_k` matches.
    TopK,
    /// Every matched material.
    AllMatched,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    /// Matches retrieved in step 1.
    pub k: usize,
    pub viewpoint_source: ViewpointSource,
    /// How many top matches feed step 2 under `ViewpointSource::TopK`.
    pub viewpoint_k: usize,
    pub min_label: Label4,
    pub budget_chars: usize,
    pub prompt_cap_chars: usize,
    pub max_completion_tokens: u32,
    pub rerank: bool,
    pub seed: Option<u64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            k: 20,
            viewpoint_source: ViewpointSource::TopK,
            viewpoint_k: 5,
            min_label: Label4::Good,
            budget_chars: 4000,
            prompt_cap_chars: 12_000,
            max_completion_tokens: 1024,
            rerank: false,
            seed: None,
        }
    }
}

/// Backends per stage. `rerank` applies only when settings enable it.
#[derive(Clone)]
pub struct StepBackends {
    pub rerank: BackendHandle,
    pub viewpoint: BackendHandle,
    pub keypoint: BackendHandle,
    pub generate: BackendHandle,
}

impl StepBackends {
    /// One backend for every stage.
    pub fn uniform(backend: BackendHandle) -> Self {
        Self {
            rerank: backend.clone(),
            viewpoint: backend.clone(),
            keypoint: backend.clone(),
            generate: backend,
        }
    }
}

fn materials_section(bundle: &PromptBundle, keep: usize) -> String {
    let kept = &bundle.matched[..keep.min(bundle.matched.len())];
    let mut out = format!("{SECTION_MATERIALS}\n");
    if kept.is_empty() {
        out.push_str("(no materials within budget)\n");
        return out;
    }
    let blocks: Vec<String> = kept
        .iter()
        .map(|m| {
            if bundle.mode == PipelineMode::RawBaseline {
                m.text.clone()
            } else {
                format!(
                    "[{}] ({}, score {:.4})\n{}",
                    m.matched.rank, m.matched.material_id, m.matched.score, m.text
                )
            }
        })
        .collect();
    out.push_str(&blocks.join("\n\n"));
    out.push('\n');
    out
}

fn viewpoints_section(selection: &ViewpointSelection) -> String {
    let mut out = format!("{SECTION_VIEWPOINTS}\n");
    for v in &selection.selected {
        out.push_str(&format!(
            "- [{} {:.2}] {}\n",
            v.label4.as_str(),
            v.score,
            v.sentence
        ));
    }
    out
}

/// Render the final prompt with clearly delimited sections. Sections absent
/// for the mode never appear. When the rendering exceeds the cap, matched
/// materials are dropped lowest-rank-first (whole texts, never trimmed
/// mid-material); if the prompt still exceeds the cap with zero materials
/// the assembly fails.
pub fn assemble_prompt(
    bundle: &PromptBundle,
    template: &PromptTemplate,
    cap_chars: usize,
) -> Result<String, PipelineError> {
    bundle.validate()?;
    let input = format!("{SECTION_INPUT}\n{}\n\n", bundle.input_text);
    let viewpoints = bundle
        .selection
        .as_ref()
        .map(|s| format!("{}\n", viewpoints_section(s)))
        .unwrap_or_default();
    let keypoints = bundle
        .keypoints
        .as_ref()
        .map(|kp| format!("{SECTION_KEYPOINTS}\n{}\n\n", serialize_record(kp)))
        .unwrap_or_default();

    let mut keep = bundle.matched.len();
    loop {
        let materials = format!("{}\n", materials_section(bundle, keep));
        let rendered = template
            .render(
                &bindings([
                    ("input", input.clone()),
                    ("materials", materials),
                    ("viewpoints", viewpoints.clone()),
                    ("keypoints", keypoints.clone()),
                ]),
                0,
            )
            .map_err(|e| stage_err("assemble", e))?;
        let len = rendered.chars().count();
        if len <= cap_chars {
            return Ok(rendered);
        }
        if keep == 0 {
            return Err(PipelineError::PromptOverCap {
                len,
                cap: cap_chars,
            });
        }
        keep -= 1;
    }
}

fn recording(backend: &BackendHandle) -> std::sync::Arc<RecordingBackend> {
    RecordingBackend::new(backend.clone())
}

/// Execute the workflow for one input. Steps 2 and 3 run according to the
/// mode; any stage error aborts the run with the stage name attached.
pub fn run_pipeline(
    input_text: &str,
    mode: PipelineMode,
    snapshot: &CorpusSnapshot,
    index: &InvertedIndex,
    backends: &StepBackends,
    settings: &RunSettings,
) -> Result<RunRecord, PipelineError> {
    let mut stages = Vec::new();
    let mut timings = BTreeMap::new();

    // Step 1: event matching (lexical, plus optional rerank).
    let match_started = Instant::now();
    let rerank_counter = recording(&backends.rerank);
    let mut matched =
        match_events(input_text, index, settings.k).map_err(|e| stage_err("match", e))?;
    if settings.rerank && !matched.is_empty() {
        let handle: BackendHandle = rerank_counter.clone();
        matched = llm_rerank(input_text, &matched, snapshot, &handle, settings.seed)
            .map_err(|e| stage_err("match", e))?;
    }
    let by_id = snapshot.by_id();
    let matched_with_text: Vec<MatchedWithText> = matched
        .iter()
        .map(|m| {
            let text = by_id
                .get(m.material_id.as_str())
                .map(|mat| mat.text.clone())
                .ok_or_else(|| stage_err("match", format!("unknown material {}", m.material_id)))?;
            Ok(MatchedWithText {
                matched: m.clone(),
                text,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let match_elapsed = match_started.elapsed().as_millis() as u64;
    timings.insert("match".to_string(), match_elapsed);
    stages.push(StageTrace {
        stage: "match".into(),
        backend_calls: rerank_counter.calls(),
        elapsed_ms: match_elapsed,
        exchanges: rerank_counter.exchanges(),
    });

    // Step 2: viewpoint scoring and selection.
    let viewpoint_counter = recording(&backends.viewpoint);
    let selection = if mode.includes_viewpoints() {
        let started = Instant::now();
        let source_count = match settings.viewpoint_source {
            ViewpointSource::TopK => settings.viewpoint_k.min(matched_with_text.len()),
            ViewpointSource::AllMatched => matched_with_text.len(),
        };
        let jobs: Vec<(String, String, String)> = matched_with_text[..source_count]
            .iter()
            .flat_map(|m| {
                split_sentences(&m.text)
                    .into_iter()
                    .map(move |sentence| (m.matched.material_id.clone(), sentence, m.text.clone()))
            })
            .collect();
        let handle: BackendHandle = viewpoint_counter.clone();
        let scored: Vec<Result<Viewpoint, String>> =
            exec::map_ordered(jobs, |(material_id, sentence, context)| {
                score_viewpoint(&material_id, &sentence, &context, &handle, settings.seed)
                    .map_err(|e| e.to_string())
            });
        let mut viewpoints = Vec::with_capacity(scored.len());
        for s in scored {
            viewpoints.push(s.map_err(|e| stage_err("viewpoints", e))?);
        }
        let selection = select_insightful(&viewpoints, settings.min_label, settings.budget_chars);
        let elapsed = started.elapsed().as_millis() as u64;
        timings.insert("viewpoints".to_string(), elapsed);
        stages.push(StageTrace {
            stage: "viewpoints".into(),
            backend_calls: viewpoint_counter.calls(),
            elapsed_ms: elapsed,
            exchanges: viewpoint_counter.exchanges(),
        });
        Some(selection)
    } else {
        stages.push(StageTrace {
            stage: "viewpoints".into(),
            backend_calls: 0,
            elapsed_ms: 0,
            exchanges: Vec::new(),
        });
        None
    };

    // Step 3: key-point extraction.
    let keypoint_counter = recording(&backends.keypoint);
    let keypoints = if mode.includes_keypoints() {
        let started = Instant::now();
        let selection_ref = selection
            .as_ref()
            .expect("mode with keypoints implies selection");
        let handle: BackendHandle = keypoint_counter.clone();
        let record = extract_keypoints(input_text, selection_ref, &handle, settings.seed)
            .map_err(|e| stage_err("keypoints", e))?;
        let elapsed = started.elapsed().as_millis() as u64;
        timings.insert("keypoints".to_string(), elapsed);
        stages.push(StageTrace {
            stage: "keypoints".into(),
            backend_calls: keypoint_counter.calls(),
            elapsed_ms: elapsed,
            exchanges: keypoint_counter.exchanges(),
        });
        Some(record)
    } else {
        stages.push(StageTrace {
            stage: "keypoints".into(),
            backend_calls: 0,
            elapsed_ms: 0,
            exchanges: Vec::new(),
        });
        None
    };

    // Step 4: prompt assembly.
    let assemble_started = Instant::now();
    let bundle = PromptBundle {
        input_text: input_text.to_string(),
        matched: matched_with_text,
        selection,
        keypoints,
        mode,
    };
    let final_prompt = assemble_prompt(
        &bundle,
        &builtin::final_generation(),
        settings.prompt_cap_chars,
    )?;
    let assemble_elapsed = assemble_started.elapsed().as_millis() as u64;
    timings.insert("assemble".to_string(), assemble_elapsed);
    stages.push(StageTrace {
        stage: "assemble".into(),
        backend_calls: 0,
        elapsed_ms: assemble_elapsed,
        exchanges: Vec::new(),
    });

    // Step 5: generation.
    let generate_started = Instant::now();
    let generate_counter = recording(&backends.generate);
    let mut request = ChatRequest::simple(final_prompt.clone(), settings.seed);
    request.max_tokens = settings.max_completion_tokens;
    let reply = generate_counter
        .complete(&request)
        .map_err(|e| stage_err("generate", e))?;
    let generate_elapsed = generate_started.elapsed().as_millis() as u64;
    timings.insert("generate".to_string(), generate_elapsed);
    stages.push(StageTrace {
        stage: "generate".into(),
        backend_calls: generate_counter.calls(),
        elapsed_ms: generate_elapsed,
        exchanges: generate_counter.exchanges(),
    });

    let run_id = format!(
        "run-{}",
        &digest_hex(&format!(
            "{}\x1f{}\x1f{input_text}",
            settings.seed.unwrap_or(0),
            mode
        ))[..12]
    );
    Ok(RunRecord {
        output: AnalysisOutput {
            run_id,
            input_text: input_text.to_string(),
            final_prompt,
            generated_analysis: reply.content,
            mode,
            stage_timings_ms: timings,
            backend_name: backends.generate.name().to_string(),
        },
        bundle,
        stages,
    })
}

/// Run a batch of independent inputs; failures isolate per input and the
/// output order equals the input order.
pub fn run_batch(
    inputs: Vec<String>,
    mode: PipelineMode,
    snapshot: &CorpusSnapshot,
    index: &InvertedIndex,
    backends: &StepBackends,
    settings: &RunSettings,
) -> Vec<RunOutcome> {
    exec::map_ordered(inputs, |input| {
        run_pipeline(&input, mode, snapshot, index, backends, settings)
            .map(Box::new)
            .map_err(|e| {
                let (stage, message) = match &e {
                    PipelineError::Stage { stage, message } => (stage.clone(), message.clone()),
                    other => ("assemble".to_string(), other.to_string()),
                };
                FailedRun {
                    input_text: input.clone(),
                    mode,
                    stage,
                    message,
                }
            })
    })
}

/// Persist one run record as `<dir>/<run_id>.json`.
pub fn save_run_record(
    record: &RunRecord,
    dir: impl AsRef<std::path::Path>,
) -> Result<std::path::PathBuf, PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", record.output.run_id));
    std::fs::write(
        &path,
        serde_json::to_string_pretty(record).expect("record serializes"),
    )?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{snapshot_from_materials, Material, MaterialKind};
    use crate::gateway::{script_mock, FallbackMode, MockMatcher};
    use crate::matcher::build_index;

    fn material(id: &str, text: &str) -> Material {
        Material {
            id: id.into(),
            text: text.into(),
            kind: MaterialKind::Report,
            source: String::new(),
            published_at: None,
            meta: BTreeMap::new(),
        }
    }

    fn snapshot() -> CorpusSnapshot {
        snapshot_from_materials(vec![
            material("m1", "Housing loan rates fall. Demand should recover."),
            material(
                "m2",
                "Housing supply policy shifts. Analysts expect easing.",
            ),
            material("m3", "Unrelated bond market note entirely. Nothing here."),
        ])
    }

    /// Mock that satisfies every pipeline stage.
    fn full_backend() -> BackendHandle {
        script_mock(
            vec![
                (
                    MockMatcher::Substring("viewpoint quality".into()),
                    "good 80".into(),
                ),
                (
                    MockMatcher::Substring("Extract the key points".into()),
                    "INDUSTRY: real estate | INDICATORS: loan volume | PERSPECTIVES: policy easing | SENTIMENT: positive".into(),
                ),
                (
                    MockMatcher::Substring("financial analyst".into()),
                    "The policy should lift housing demand.".into(),
                ),
                (MockMatcher::Substring("analogous".into()), "7".into()),
            ],
            FallbackMode::Error,
        )
    }

    fn settings() -> RunSettings {
        RunSettings {
            seed: Some(42),
            ..Default::default()
        }
    }

    fn run(mode: PipelineMode) -> RunRecord {
        let snapshot = snapshot();
        let index = build_index(&snapshot).unwrap();
        let backends = StepBackends::uniform(full_backend());
        run_pipeline(
            "housing loan policy",
            mode,
            &snapshot,
            &index,
            &backends,
            &settings(),
        )
        .unwrap()
    }

    #[test]
    fn fllm_1_has_materials_but_no_viewpoints_or_keypoints() {
        let record = run(PipelineMode::Fllm1);
        let prompt = &record.output.final_prompt;
        assert!(prompt.contains(SECTION_INPUT));
        assert!(prompt.contains(SECTION_MATERIALS));
        assert!(!prompt.contains(SECTION_VIEWPOINTS));
        assert!(!prompt.contains(SECTION_KEYPOINTS));
    }

    #[test]
    fn fllm_123_has_each_section_exactly_once() {
        let record = run(PipelineMode::Fllm123);
        let prompt = &record.output.final_prompt;
        for marker in [
            SECTION_INPUT,
            SECTION_MATERIALS,
            SECTION_VIEWPOINTS,
            SECTION_KEYPOINTS,
        ] {
            assert_eq!(prompt.matches(marker).count(), 1, "marker {marker}");
        }
    }

    #[test]
    fn raw_baseline_skips_viewpoint_and_keypoint_calls() {
        let record = run(PipelineMode::RawBaseline);
        let calls: BTreeMap<&str, u64> = record
            .stages
            .iter()
            .map(|s| (s.stage.as_str(), s.backend_calls))
            .collect();
        assert_eq!(calls["viewpoints"], 0);
        assert_eq!(calls["keypoints"], 0);
        assert_eq!(calls["generate"], 1);
        assert!(!record.output.final_prompt.contains(SECTION_VIEWPOINTS));
    }

    #[test]
    fn backend_call_counts_monotone_across_modes() {
        let total =
            |record: &RunRecord| -> u64 { record.stages.iter().map(|s| s.backend_calls).sum() };
        let raw = total(&run(PipelineMode::RawBaseline));
        let one = total(&run(PipelineMode::Fllm1));
        let two = total(&run(PipelineMode::Fllm12));
        let three = total(&run(PipelineMode::Fllm123));
        assert!(raw <= one && one <= two && two <= three);
        assert!(two > one, "viewpoint scoring adds calls");
        assert!(three > two, "keypoint extraction adds calls");
    }

    #[test]
    fn identical_runs_identical_outputs_modulo_timings() {
        let a = run(PipelineMode::Fllm123);
        let b = run(PipelineMode::Fllm123);
        assert_eq!(a.output.run_id, b.output.run_id); // seed-derived
        assert_eq!(a.output.final_prompt, b.output.final_prompt);
        assert_eq!(a.output.generated_analysis, b.output.generated_analysis);
        assert_eq!(a.bundle, b.bundle);
    }

    #[test]
    fn replay_from_persisted_record_reproduces_analysis() {
        let dir = tempfile::tempdir().unwrap();
        let record = run(PipelineMode::Fllm12);
        let path = save_run_record(&record, dir.path()).unwrap();
        let loaded: RunRecord =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let again = run(PipelineMode::Fllm12);
        assert_eq!(
            loaded.output.generated_analysis,
            again.output.generated_analysis
        );
        assert_eq!(loaded.output.final_prompt, again.output.final_prompt);
    }

    #[test]
    fn truncation_drops_lowest_ranked_material_first() {
        // Three matched materials with long texts and a cap that only fits
        // dropping down to two; the kept ones are ranks 1 and 2.
        let long = "x".repeat(400);
        let bundle = PromptBundle {
            input_text: "q".into(),
            matched: (1..=3)
                .map(|i| MatchedWithText {
                    matched: MatchedMaterial {
                        material_id: format!("m{i}"),
                        score: 1.0 / i as f64,
                        rank: i,
                        rerank_score: None,
                    },
                    text: format!("doc{i} {long}"),
                })
                .collect(),
            selection: None,
            keypoints: None,
            mode: PipelineMode::Fllm1,
        };
        let template = builtin::final_generation();
        let full = assemble_prompt(&bundle, &template, 100_000).unwrap();
        assert!(full.contains("doc3"));
        let cap = full.chars().count() - 10;
        let truncated = assemble_prompt(&bundle, &template, cap).unwrap();
        assert!(truncated.chars().count() <= cap);
        assert!(truncated.contains("doc1"));
        assert!(truncated.contains("doc2"));
        assert!(!truncated.contains("doc3"), "lowest rank dropped first");
    }

    #[test]
    fn over_cap_after_dropping_everything_errors() {
        let bundle = PromptBundle {
            input_text: "y".repeat(500),
            matched: vec![],
            selection: None,
            keypoints: None,
            mode: PipelineMode::Fllm1,
        };
        let err = assemble_prompt(&bundle, &builtin::final_generation(), 100).unwrap_err();
        assert!(matches!(err, PipelineError::PromptOverCap { .. }));
    }

    #[test]
    fn bundle_invariants_enforced() {
        let bundle = PromptBundle {
            input_text: "q".into(),
            matched: vec![],
            selection: Some(ViewpointSelection {
                selected: vec![],
                total_chars: 0,
                budget_chars: 10,
            }),
            keypoints: None,
            mode: PipelineMode::Fllm1, // selection must be absent here
        };
        assert!(bundle.validate().is_err());
    }

    #[test]
    fn sentinel_in_material_may_appear_unselected_viewpoint_must_not() {
        // Plant a sentinel in a material: under fllm_1 the material text
        // flows into the prompt, but no viewpoint section exists, so a
        // sentence-level sentinel can only arrive via the material block.
        let snapshot = snapshot_from_materials(vec![material(
            "m1",
            "Housing loan rates fall. SENTINEL_VIEWPOINT_TOKEN here.",
        )]);
        let index = build_index(&snapshot).unwrap();
        let backends = StepBackends::uniform(full_backend());
        let record = run_pipeline(
            "housing loan",
            PipelineMode::Fllm1,
            &snapshot,
            &index,
            &backends,
            &settings(),
        )
        .unwrap();
        // Material text appears wholesale under fllm_1.
        assert!(record
            .output
            .final_prompt
            .contains("SENTINEL_VIEWPOINT_TOKEN"));
        assert!(!record.output.final_prompt.contains(SECTION_VIEWPOINTS));

        // Under fllm_12 with a budget of zero nothing is selected, so the
        // sentinel must not appear anywhere: materials render only rank 1
        // text (which includes it) -- so instead check the viewpoint path:
        // an unselected sentence cannot leak into the VIEWPOINTS section.
        let tight = RunSettings {
            budget_chars: 0,
            seed: Some(42),
            ..Default::default()
        };
        let record12 = run_pipeline(
            "housing loan",
            PipelineMode::Fllm12,
            &snapshot,
            &index,
            &backends,
            &tight,
        )
        .unwrap();
        let prompt = &record12.output.final_prompt;
        let vp_section = &prompt[prompt.find(SECTION_VIEWPOINTS).unwrap()..];
        assert!(!vp_section.contains("SENTINEL_VIEWPOINT_TOKEN"));
    }

    #[test]
    fn batch_isolates_planted_failure() {
        // The sabotaged input produces garbage viewpoint replies (twice), so
        // its run fails at the viewpoints stage; the rest succeed.
        let backend: BackendHandle = script_mock(
            vec![
                (
                    MockMatcher::Substring("TRIGGER_FAILURE".into()),
                    "???".into(),
                ),
                (
                    MockMatcher::Substring("viewpoint quality".into()),
                    "good 80".into(),
                ),
                (
                    MockMatcher::Substring("Extract the key points".into()),
                    "INDUSTRY: x | SENTIMENT: neutral".into(),
                ),
                (
                    MockMatcher::Substring("financial analyst".into()),
                    "ok".into(),
                ),
            ],
            FallbackMode::Error,
        );
        let snapshot = snapshot_from_materials(vec![
            material("m1", "Housing loan TRIGGER_FAILURE sentence."),
            material("m2", "Calm policy news. Calm analysis."),
        ]);
        let index = build_index(&snapshot).unwrap();
        let backends = StepBackends::uniform(backend);
        // 1,000 inputs; only item 7 retrieves the sabotaged document.
        let inputs: Vec<String> = (0..1000)
            .map(|i| {
                if i == 7 {
                    "housing loan".to_string()
                } else {
                    "calm analysis".to_string()
                }
            })
            .collect();
        let outcomes = run_batch(
            inputs,
            PipelineMode::Fllm123,
            &snapshot,
            &index,
            &backends,
            &settings(),
        );
        assert_eq!(outcomes.len(), 1000);
        let successes = outcomes.iter().filter(|o| o.is_ok()).count();
        assert_eq!(successes, 999);
        match &outcomes[7] {
            Err(f) => {
                assert_eq!(f.stage, "viewpoints");
                assert_eq!(f.input_text, "housing loan");
            }
            Ok(_) => panic!("item 7 should fail at viewpoints"),
        }
        assert!(
            outcomes[6].is_ok() && outcomes[8].is_ok(),
            "neighbors unaffected"
        );
    }
}
