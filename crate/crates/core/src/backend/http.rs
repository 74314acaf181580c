use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tracing::warn;

use super::{Backend, BackendConfig, BackendError, CompletionRequest, Embedding};

/// Client for chat-completion compatible services (`/chat/completions` and
/// `/embeddings`). The API key is read from the environment variable named
/// in the config.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: String,
    gate: InFlight,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env_name).map_err(|_| {
            BackendError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env_name
            ))
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlight::new(config.max_in_flight);
        Ok(HttpBackend {
            config,
            agent,
            api_key,
            gate,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(backoff.min(30_000)));
            }
            let _permit = self.gate.acquire();
            let result = self
                .agent
                .post(&self.url(path))
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body);
            match result {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}");
                        warn!(path, status, attempt, "transient backend failure");
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(BackendError::Protocol(format!("HTTP {status}: {text}")));
                    }
                    return resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| BackendError::Protocol(e.to_string()));
                }
                Err(e) => {
                    last = e.to_string();
                    warn!(path, attempt, error = %e, "backend request failed");
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts,
            reason: last,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let mut out = Vec::with_capacity(req.sample_count);
        // Some services ignore `n`; keep asking until the count is met.
        for _ in 0..req.sample_count {
            let missing = req.sample_count - out.len();
            if missing == 0 {
                break;
            }
            let mut body = json!({
                "model": self.config.model_name,
                "messages": [{"role": "user", "content": req.rendered_prompt}],
                "n": missing,
                "temperature": req.temperature,
            });
            if let Some(seed) = req.seed {
                body["seed"] = json!(seed);
            }
            let v = self.post("chat/completions", &body)?;
            let choices = v["choices"]
                .as_array()
                .ok_or_else(|| BackendError::Protocol("response has no `choices`".into()))?;
            for c in choices.iter().take(missing) {
                let text = c["message"]["content"]
                    .as_str()
                    .ok_or_else(|| BackendError::Protocol("choice without message content".into()))?;
                out.push(text.to_string());
            }
        }
        if out.len() != req.sample_count {
            return Err(BackendError::Protocol(format!(
                "service returned {} of {} samples",
                out.len(),
                req.sample_count
            )));
        }
        Ok(out)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let body = json!({ "model": self.config.embed_model_name, "input": text });
        let v = self.post("embeddings", &body)?;
        let values = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::Protocol("response has no embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::Protocol("non-numeric embedding value".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Embedding(values))
    }
}

/// Counting semaphore capping concurrent requests.
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("in-flight lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("in-flight lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("in-flight lock") += 1;
        self.0.cv.notify_one();
    }
}
