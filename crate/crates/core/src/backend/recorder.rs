use std::sync::{Arc, Mutex};

use super::{Backend, BackendError, CompletionRequest, Embedding};

#[derive(Debug, Clone)]
pub struct RecordedCall {
    pub request: CompletionRequest,
    pub ok: bool,
}

/// Wraps a backend and keeps every completion request it forwards.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    calls: Mutex<Vec<RecordedCall>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        RecordingBackend {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().expect("recorder lock").clone()
    }

    pub fn clear(&self) {
        self.calls.lock().expect("recorder lock").clear();
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let out = self.inner.complete(req);
        self.calls.lock().expect("recorder lock").push(RecordedCall {
            request: req.clone(),
            ok: out.is_ok(),
        });
        out
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        self.inner.embed(text)
    }
}
