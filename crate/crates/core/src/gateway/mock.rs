//! Deterministic scriptable mock backend.
//!
//! Replies are a pure function of `(messages, seed, fixtures)`: the first
//! fixture whose matcher hits the canonical prompt wins; unmatched prompts
//! either echo a stable digest-derived token or fail, per the fallback mode.

use serde::{Deserialize, Serialize};

use super::{digest_hex, Backend, ChatReply, ChatRequest, FinishReason, GatewayError, Usage};

/// How a fixture recognizes a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockMatcher {
    /// Canonical prompt contains this substring.
    Substring(String),
    /// Full hex sha256 digest of the canonical prompt equals this value.
    PromptHash(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackMode {
    /// Reply with a stable token derived from the prompt digest and seed.
    #[default]
    EchoHash,
    /// Surface an `Unmatched` completion error.
    Error,
}

pub struct MockBackend {
    name: String,
    fixtures: Vec<(MockMatcher, String)>,
    fallback: FallbackMode,
}

/// Build a scripted mock backend. Fixtures are consulted in order;
/// the first match wins.
pub fn script_mock(
    fixtures: Vec<(MockMatcher, String)>,
    fallback: FallbackMode,
) -> super::BackendHandle {
    std::sync::Arc::new(MockBackend::new("mock", fixtures, fallback))
}

impl MockBackend {
    pub fn new(
        name: impl Into<String>,
        fixtures: Vec<(MockMatcher, String)>,
        fallback: FallbackMode,
    ) -> Self {
        Self {
            name: name.into(),
            fixtures,
            fallback,
        }
    }

    fn reply_for(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = request.canonical_prompt();
        let digest = digest_hex(&prompt);
        for (matcher, reply) in &self.fixtures {
            let hit = match matcher {
                MockMatcher::Substring(needle) => prompt.contains(needle.as_str()),
                MockMatcher::PromptHash(h) => digest.eq_ignore_ascii_case(h),
            };
            if hit {
                return Ok(reply.clone());
            }
        }
        match self.fallback {
            FallbackMode::EchoHash => {
                let seed = request.seed.unwrap_or(0);
                let token = digest_hex(&format!("{prompt}\x1f{seed}"));
                Ok(format!("mock-{}", &token[..16]))
            }
            FallbackMode::Error => Err(GatewayError::Unmatched {
                digest: digest[..16].to_string(),
            }),
        }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        request.validate()?;
        let content = self.reply_for(request)?;
        let prompt_tokens = request
            .messages
            .iter()
            .map(|m| m.content.split_whitespace().count() as u64)
            .sum();
        let finish_reason = if content.is_empty() {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Ok(ChatReply {
            usage: Usage {
                prompt_tokens,
                completion_tokens: content.split_whitespace().count() as u64,
            },
            content,
            finish_reason,
            latency_ms: 0,
        })
    }
}
