//! Built-in prompt templates for every backend-facing stage.
//!
//! Each template carries a distinctive instruction phrase so scripted mock
//! fixtures can target individual stages by substring. Section and knowledge
//! markers live in the *bindings*, not the template bodies, so omitted
//! sections leave no marker behind in the rendered prompt.

use super::template::PromptTemplate;

/// Appended as an extra user message when a reply fails to parse and the
/// stage issues its single reprompt.
pub const STRICT_RETRY_NOTE: &str =
    "Your previous reply did not follow the required format. Reply again using exactly the required format.";

fn template(id: &str, body: &str, slots: &[&str]) -> PromptTemplate {
    PromptTemplate::new(id, "1", body, slots.iter().copied())
        .expect("built-in template is well-formed")
}

/// Analogy reranking of one retrieval candidate against the query.
pub fn rerank() -> PromptTemplate {
    template(
        "rerank/analogy",
        "Rate how analogous the candidate material is to the query on an integer scale from 0 (unrelated) to 10 (directly analogous case). Reply with the integer only.\n\nQuery:\n{{query}}\n\nCandidate:\n{{candidate}}",
        &["query", "candidate"],
    )
}

/// Viewpoint quality scoring of one sentence in context.
pub fn viewpoint_score() -> PromptTemplate {
    template(
        "viewpoint/score",
        "Judge the viewpoint quality of the sentence below. Reply with one label (excellent, good, fair, or poor) followed by an insight score from 0 to 100, for example: good 75\n\nSentence:\n{{sentence}}\n\nContext:\n{{context}}",
        &["sentence", "context"],
    )
}

/// Structured key-point extraction from the input plus selected viewpoints.
pub fn keypoint_extract() -> PromptTemplate {
    template(
        "keypoint/extract",
        "Extract the key points of the input. Reply in exactly this field-tagged format:\nINDUSTRY: <industry> | INDICATORS: <a>; <b> | PERSPECTIVES: <a>; <b> | SENTIMENT: <positive|negative|neutral|mixed>\n\nInput:\n{{input}}\n\nSelected viewpoints:\n{{viewpoints}}",
        &["input", "viewpoints"],
    )
}

/// Question generation over a pseudo-label (first augmentation stage).
pub fn fap_questions() -> PromptTemplate {
    template(
        "aar/fap",
        "Generate numbered analysis questions (at most 10) that expose gaps, inconsistencies, or points needing clarification in the preliminary label. One question per line, numbered 1., 2., ...\n{{knowledge}}\nInput:\n{{input}}\n\nPreliminary label:\n{{pseudo_label}}",
        &["knowledge", "input", "pseudo_label"],
    )
}

/// Knowledge-grounded answering of the generated questions.
pub fn fae_answers() -> PromptTemplate {
    template(
        "aar/fae",
        "Answer each analysis question below, grounded in the given material. One answer per line, numbered to match the questions.\n{{knowledge}}\nInput:\n{{input}}\n\nPreliminary label:\n{{pseudo_label}}\n\nQuestions:\n{{questions}}",
        &["knowledge", "input", "pseudo_label", "questions"],
    )
}

/// Fusion of the pseudo-label with the question-answer pairs into a revised
/// label in the task's schema.
pub fn fadom_fuse() -> PromptTemplate {
    template(
        "aar/fadom",
        "Fuse the preliminary label with the question-answer analysis below and reply with the corrected label only, in the same schema as the preliminary label.\n{{knowledge}}\nInput:\n{{input}}\n\nPreliminary label:\n{{pseudo_label}}\n\nAnalysis:\n{{qa}}",
        &["knowledge", "input", "pseudo_label", "qa"],
    )
}

/// Final generation prompt assembled by the pipeline; section content
/// (with its markers) arrives through the bindings.
pub fn final_generation() -> PromptTemplate {
    template(
        "pipeline/final",
        "You are a financial analyst. Write a focused, well-structured interpretation of the input below, using only the provided context.\n\n{{input}}{{materials}}{{viewpoints}}{{keypoints}}",
        &["input", "materials", "viewpoints", "keypoints"],
    )
}

/// Pseudo-labeler prompt for one task; the fledgling-model stand-in.
pub fn pseudo_label(task: &str) -> PromptTemplate {
    let body = match task {
        "EMA" => "Label task EMA: list the ids of corpus materials analogous to the input, as a comma-separated list.\n\nInput:\n{{input}}",
        "VQE" => "Label task VQE: classify the viewpoint quality of the input as one of excellent, good, fair, poor. Reply with the label only.\n\nInput:\n{{input}}",
        "KPE" => "Label task KPE: extract key points from the input. Reply as:\nINDUSTRY: ... | INDICATORS: ...; ... | PERSPECTIVES: ...; ... | SENTIMENT: ...\n\nInput:\n{{input}}",
        other => panic!("unknown task {other}"),
    };
    template(
        &format!("label/{}", task.to_ascii_lowercase()),
        body,
        &["input"],
    )
}
