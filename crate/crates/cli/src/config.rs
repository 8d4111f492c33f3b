//! Declarative run configuration: one TOML file declaring backends, the
//! stage-to-backend map, and pipeline defaults. Flags override file values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use finsight_core::gateway::{build_backend, BackendConfig, BackendHandle, GatewayError};
use finsight_core::pipeline::{PipelineMode, RunSettings, ViewpointSource};
use finsight_core::viewpoint::Label4;

/// Stages that may appear in `[step_backends]`.
pub const STAGES: [&str; 6] = [
    "rerank",
    "viewpoint",
    "keypoint",
    "generate",
    "labeler",
    "aar",
];

/// Config-validation failure carrying the offending field path; the CLI
/// maps it to exit code 3.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at {}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(path: impl Into<String>, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub viewpoint_k: Option<usize>,
    pub viewpoint_source: Option<String>,
    pub budget_chars: Option<usize>,
    pub prompt_cap: Option<usize>,
    pub min_label: Option<String>,
    pub mode: Option<String>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub step_backends: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: FileConfig = toml::from_str(&raw)
            .map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
        for (key, backend) in config.backends.iter_mut() {
            if backend.name.is_empty() {
                backend.name = key.clone();
            }
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        for (stage, backend) in &self.step_backends {
            if !STAGES.contains(&stage.as_str()) {
                return Err(config_err(
                    format!("step_backends.{stage}"),
                    format!("unknown stage; expected one of {STAGES:?}"),
                ));
            }
            if !self.backends.contains_key(backend) {
                return Err(config_err(
                    format!("step_backends.{stage}"),
                    format!("references undeclared backend {backend:?}"),
                ));
            }
        }
        if let Some(mode) = &self.mode {
            if PipelineMode::parse(mode).is_none() {
                return Err(config_err(
                    "mode",
                    format!("invalid pipeline mode {mode:?}"),
                ));
            }
        }
        if let Some(label) = &self.min_label {
            if Label4::parse(label).is_none() {
                return Err(config_err("min_label", format!("invalid label {label:?}")));
            }
        }
        if let Some(source) = &self.viewpoint_source {
            if parse_viewpoint_source(source).is_none() {
                return Err(config_err(
                    "viewpoint_source",
                    format!("expected top_k or all_matched, got {source:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Resolve a backend by name, surfacing build problems as config errors.
    pub fn backend(&self, name: &str) -> Result<BackendHandle> {
        let config = self.backends.get(name).ok_or_else(|| {
            config_err(format!("backends.{name}"), "backend not declared in config")
        })?;
        build_backend(config).map_err(|e| match e {
            GatewayError::Config { field, message } => config_err(field, message),
            other => anyhow::Error::new(other),
        })
    }

    /// Build run settings from file values plus flag overrides.
    pub fn run_settings(&self, seed: Option<u64>, k: Option<usize>, rerank: bool) -> RunSettings {
        let defaults = RunSettings::default();
        RunSettings {
            k: k.or(self.k).unwrap_or(defaults.k),
            viewpoint_source: self
                .viewpoint_source
                .as_deref()
                .and_then(parse_viewpoint_source)
                .unwrap_or(defaults.viewpoint_source),
            viewpoint_k: self.viewpoint_k.unwrap_or(defaults.viewpoint_k),
            min_label: self
                .min_label
                .as_deref()
                .and_then(Label4::parse)
                .unwrap_or(defaults.min_label),
            budget_chars: self.budget_chars.unwrap_or(defaults.budget_chars),
            prompt_cap_chars: self.prompt_cap.unwrap_or(defaults.prompt_cap_chars),
            max_completion_tokens: defaults.max_completion_tokens,
            rerank,
            seed: seed.or(self.seed),
        }
    }
}

pub fn parse_viewpoint_source(s: &str) -> Option<ViewpointSource> {
    match s.trim().to_ascii_lowercase().as_str() {
        "top_k" => Some(ViewpointSource::TopK),
        "all_matched" => Some(ViewpointSource::AllMatched),
        _ => None,
    }
}

/// Stage map from `--backend-map` TOML: either bare `stage = "name"` pairs
/// or a `[step_backends]` table.
#[derive(Debug, Default, Deserialize)]
struct BackendMapFile {
    #[serde(default)]
    step_backends: BTreeMap<String, String>,
    #[serde(flatten)]
    bare: BTreeMap<String, String>,
}

pub fn load_backend_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading backend map {}", path.display()))?;
    let parsed: BackendMapFile =
        toml::from_str(&raw).map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
    let mut map = parsed.bare;
    map.extend(parsed.step_backends);
    for stage in map.keys() {
        if !STAGES.contains(&stage.as_str()) {
            return Err(config_err(
                format!("backend-map.{stage}"),
                format!("unknown stage; expected one of {STAGES:?}"),
            ));
        }
    }
    Ok(map)
}

/// Resolve the backend for one stage: `--backend` flag wins, then the
/// backend-map file, then the config's `[step_backends]`.
pub fn stage_backend(
    config: &FileConfig,
    map_override: &BTreeMap<String, String>,
    flag: Option<&str>,
    stage: &str,
) -> Result<BackendHandle> {
    if let Some(name) = flag {
        return config.backend(name);
    }
    if let Some(name) = map_override.get(stage) {
        return config.backend(name);
    }
    if let Some(name) = config.step_backends.get(stage) {
        return config.backend(name);
    }
    Err(config_err(
        format!("step_backends.{stage}"),
        "no backend configured for this stage (declare it in config, --backend-map, or pass --backend)",
    ))
}
