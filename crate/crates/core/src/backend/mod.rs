//! Text generation and embedding behind one contract.
//!
//! Two implementations: [`HttpBackend`] for chat-completion compatible
//! services and [`ScriptedBackend`], a fixture-driven mock keyed by
//! `(template_id, case_id, turn_index, sample_index)`.

mod embed;
mod http;
mod recorder;
mod scripted;
mod template;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{hash_embedding, Embedding};
pub use http::HttpBackend;
pub use recorder::{RecordedCall, RecordingBackend};
pub use scripted::{ScriptEntry, ScriptFile, ScriptKey, ScriptedBackend, SCRIPT_VERSION};
pub use template::{render, PromptTemplate, TemplateId, TemplateSet, SLOTS};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },

    #[error("no script fixture for {0}")]
    ScriptMiss(ScriptKey),

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub case_id: String,
    pub turn_index: usize,
    /// Index of the first requested sample; retries ask for fresh indices.
    #[serde(default)]
    pub sample_offset: usize,
    pub rendered_prompt: String,
    pub sample_count: usize,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError>;

    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        (**self).complete(req)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).embed(text)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        (**self).complete(req)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).embed(text)
    }
}

/// Calls [`Backend::complete`] and enforces the sample-count contract on both
/// sides of the call.
pub fn complete(backend: &dyn Backend, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
    if req.sample_count == 0 {
        return Err(BackendError::Config("sample_count must be at least 1".into()));
    }
    if req.temperature.is_nan() || req.temperature < 0.0 {
        return Err(BackendError::Config("temperature must be non-negative".into()));
    }
    let out = backend.complete(req)?;
    if out.len() != req.sample_count {
        return Err(BackendError::Protocol(format!(
            "expected {} samples, got {}",
            req.sample_count,
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}
fn default_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env_name: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub embed_model_name: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    /// Dimension of the hash embeddings produced by the scripted backend.
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl BackendConfig {
    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint_url: String::new(),
            api_key_env_name: default_key_env(),
            model_name: String::new(),
            embed_model_name: String::new(),
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            script_path: Some(script_path.into()),
            embedding_dim: default_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Scripted => {
                if self.script_path.is_none() {
                    return Err(BackendError::Config(
                        "scripted backend requires script_path".into(),
                    ));
                }
                if self.embedding_dim == 0 {
                    return Err(BackendError::Config("embedding_dim must be positive".into()));
                }
            }
            BackendKind::Http => {
                if self.endpoint_url.trim().is_empty() {
                    return Err(BackendError::Config("http backend requires endpoint_url".into()));
                }
                if self.api_key_env_name.trim().is_empty() {
                    return Err(BackendError::Config(
                        "http backend requires api_key_env_name".into(),
                    ));
                }
                if self.model_name.trim().is_empty() || self.embed_model_name.trim().is_empty() {
                    return Err(BackendError::Config(
                        "http backend requires model_name and embed_model_name".into(),
                    ));
                }
                if self.max_in_flight == 0 {
                    return Err(BackendError::Config("max_in_flight must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Resolves a relative `script_path` against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.script_path {
            if p.is_relative() {
                self.script_path = Some(base.join(p));
            }
        }
    }
}

/// Builds the backend described by `config`.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn Backend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Scripted => {
            let path = config.script_path.as_ref().expect("validated");
            let b = ScriptedBackend::load(path)?.with_embedding_dim(config.embedding_dim);
            Ok(Arc::new(b))
        }
        BackendKind::Http => Ok(Arc::new(HttpBackend::new(config.clone())?)),
    }
}
