//! Prompt templates with named `{{slot}}` substitution and few-shot
//! demonstration insertion.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template_id}: required slot {slot:?} must appear exactly once in body (found {found})")]
    SlotCount {
        template_id: String,
        slot: String,
        found: usize,
    },
    #[error("missing binding for slot {slot:?}")]
    MissingSlot { slot: String },
    #[error("unbound slot {slot:?} left in rendered output")]
    UnboundSlot { slot: String },
    #[error("requested {shots} demonstration shot(s) but only {available} available")]
    ShotsExceedDemonstrations { shots: usize, available: usize },
}

/// One few-shot exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

/// A versioned prompt body with named slots and an ordered demonstration
/// pool. Rendering is deterministic: same template, bindings, and shot count
/// always produce the same string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub version: String,
    body: String,
    required_slots: BTreeSet<String>,
    #[serde(default)]
    demonstrations: Vec<Demonstration>,
}

impl PromptTemplate {
    /// Validates that every required slot appears exactly once in the body.
    pub fn new(
        template_id: impl Into<String>,
        version: impl Into<String>,
        body: impl Into<String>,
        required_slots: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, TemplateError> {
        let template_id = template_id.into();
        let body = body.into();
        let required_slots: BTreeSet<String> = required_slots.into_iter().map(Into::into).collect();
        for slot in &required_slots {
            let marker = format!("{{{{{slot}}}}}");
            let found = body.matches(&marker).count();
            if found != 1 {
                return Err(TemplateError::SlotCount {
                    template_id,
                    slot: slot.clone(),
                    found,
                });
            }
        }
        Ok(Self {
            template_id,
            version: version.into(),
            body,
            required_slots,
            demonstrations: Vec::new(),
        })
    }

    pub fn with_demonstrations(mut self, demonstrations: Vec<Demonstration>) -> Self {
        self.demonstrations = demonstrations;
        self
    }

    pub fn demonstrations(&self) -> &[Demonstration] {
        &self.demonstrations
    }

    pub fn required_slots(&self) -> &BTreeSet<String> {
        &self.required_slots
    }

    /// Render with the first `shots` demonstrations serialized before the
    /// live body, in stored order. Every required slot must be bound; any
    /// `{{...}}` marker surviving substitution is an error.
    pub fn render(
        &self,
        bindings: &BTreeMap<String, String>,
        shots: usize,
    ) -> Result<String, TemplateError> {
        for slot in &self.required_slots {
            if !bindings.contains_key(slot) {
                return Err(TemplateError::MissingSlot { slot: slot.clone() });
            }
        }
        if shots > self.demonstrations.len() {
            return Err(TemplateError::ShotsExceedDemonstrations {
                shots,
                available: self.demonstrations.len(),
            });
        }

        let mut out = String::new();
        for (i, demo) in self.demonstrations.iter().take(shots).enumerate() {
            out.push_str(&format!(
                "### Example {}\nInput: {}\nOutput: {}\n\n",
                i + 1,
                demo.input,
                demo.output
            ));
        }

        let mut rendered = self.body.clone();
        for (slot, value) in bindings {
            rendered = rendered.replace(&format!("{{{{{slot}}}}}"), value);
        }
        if let Some(start) = rendered.find("{{") {
            let rest = &rendered[start + 2..];
            let slot = rest
                .find("}}")
                .map(|end| rest[..end].to_string())
                .unwrap_or_else(|| rest.chars().take(24).collect());
            return Err(TemplateError::UnboundSlot { slot });
        }
        out.push_str(&rendered);
        Ok(out)
    }
}

/// Convenience for building binding maps.
pub fn bindings<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
