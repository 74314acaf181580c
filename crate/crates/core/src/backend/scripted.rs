use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hash_embedding, Backend, BackendError, CompletionRequest, Embedding, TemplateId};

pub const SCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScriptKey {
    pub template: TemplateId,
    pub case_id: String,
    pub turn: usize,
    pub sample: usize,
}

impl fmt::Display for ScriptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, turn {}, sample {})",
            self.template, self.case_id, self.turn, self.sample
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(flatten)]
    pub key: ScriptKey,
    pub text: String,
}

/// On-disk fixture document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub version: u32,
    pub entries: Vec<ScriptEntry>,
}

impl ScriptFile {
    pub fn new() -> Self {
        ScriptFile {
            version: SCRIPT_VERSION,
            entries: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        template: TemplateId,
        case_id: &str,
        turn: usize,
        sample: usize,
        text: impl Into<String>,
    ) {
        self.entries.push(ScriptEntry {
            key: ScriptKey {
                template,
                case_id: case_id.to_string(),
                turn,
                sample,
            },
            text: text.into(),
        });
    }
}

impl Default for ScriptFile {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic mock: completions come from the fixture, embeddings from a
/// hash of the text. Read-only after construction.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: HashMap<ScriptKey, String>,
    embedding_dim: usize,
}

impl ScriptedBackend {
    pub fn new(script: ScriptFile) -> Result<Self, BackendError> {
        if script.version != SCRIPT_VERSION {
            return Err(BackendError::Config(format!(
                "unsupported script version {} (expected {SCRIPT_VERSION})",
                script.version
            )));
        }
        let mut entries = HashMap::with_capacity(script.entries.len());
        for e in script.entries {
            if entries.insert(e.key.clone(), e.text).is_some() {
                return Err(BackendError::Config(format!("duplicate script key {}", e.key)));
            }
        }
        Ok(ScriptedBackend {
            entries,
            embedding_dim: 64,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("reading {}: {e}", path.display())))?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("parsing {}: {e}", path.display())))?;
        Self::new(script)
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        (req.sample_offset..req.sample_offset + req.sample_count)
            .map(|sample| {
                let key = ScriptKey {
                    template: req.template_id,
                    case_id: req.case_id.clone(),
                    turn: req.turn_index,
                    sample,
                };
                self.entries
                    .get(&key)
                    .cloned()
                    .ok_or(BackendError::ScriptMiss(key))
            })
            .collect()
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        hash_embedding(text, self.embedding_dim)
    }
}
