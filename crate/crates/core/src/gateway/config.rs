//! Declarative backend configuration.
//!
//! One entry per backend: `{name, kind, endpoint?, headers?, model_id,
//! max_in_flight, timeout_s, attempts}`. Header values may reference
//! environment variables as `${VAR}` so secrets stay out of config files.
//! Mock backends script their fixtures inline.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mock::{FallbackMode, MockBackend, MockMatcher};
use super::remote::RemoteBackend;
use super::{BackendHandle, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

/// One scripted mock fixture as it appears in config files. Exactly one of
/// `contains`/`hash` should be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    pub reply: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Filled from the config map key when omitted.
    #[serde(default)]
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub model_id: String,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "defaults::timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "defaults::attempts")]
    pub attempts: u32,
    #[serde(default = "defaults::backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub fixtures: Vec<FixtureConfig>,
    #[serde(default)]
    pub fallback_mode: FallbackMode,
}

mod defaults {
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn timeout_s() -> u64 {
        60
    }
    pub fn attempts() -> u32 {
        3
    }
    pub fn backoff_ms() -> u64 {
        1000
    }
}

/// Replace `${VAR}` references with environment values. Unknown variables
/// are a config error naming the field.
fn substitute_env(value: &str, field: &str) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| GatewayError::Config {
            field: field.to_string(),
            message: "unterminated ${ in value".into(),
        })?;
        let var = &after[..end];
        let resolved = std::env::var(var).map_err(|_| GatewayError::Config {
            field: field.to_string(),
            message: format!("environment variable {var} not set"),
        })?;
        out.push_str(&resolved);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Instantiate a backend from its config entry.
pub fn build_backend(config: &BackendConfig) -> Result<BackendHandle, GatewayError> {
    match config.kind {
        BackendKind::Remote => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| GatewayError::Config {
                    field: format!("backends.{}.endpoint", config.name),
                    message: "remote backend requires an endpoint".into(),
                })?;
            let mut headers = Vec::with_capacity(config.headers.len());
            for (k, v) in &config.headers {
                let field = format!("backends.{}.headers.{}", config.name, k);
                headers.push((k.clone(), substitute_env(v, &field)?));
            }
            let backend = RemoteBackend::new(
                config.name.clone(),
                endpoint,
                headers,
                config.model_id.clone(),
                config.max_in_flight,
                Duration::from_secs(config.timeout_s),
                config.attempts,
                Duration::from_millis(config.backoff_ms),
            )?;
            Ok(Arc::new(backend))
        }
        BackendKind::Mock => {
            let mut fixtures = Vec::with_capacity(config.fixtures.len());
            for (i, f) in config.fixtures.iter().enumerate() {
                let matcher = match (&f.contains, &f.hash) {
                    (Some(s), None) if !s.is_empty() => MockMatcher::Substring(s.clone()),
                    (None, Some(h)) if !h.is_empty() => MockMatcher::PromptHash(h.clone()),
                    _ => {
                        return Err(GatewayError::Config {
                            field: format!("backends.{}.fixtures[{i}]", config.name),
                            message:
                                "fixture needs exactly one non-empty matcher (contains or hash)"
                                    .into(),
                        })
                    }
                };
                fixtures.push((matcher, f.reply.clone()));
            }
            Ok(Arc::new(MockBackend::new(
                config.name.clone(),
                fixtures,
                config.fallback_mode,
            )))
        }
    }
}
