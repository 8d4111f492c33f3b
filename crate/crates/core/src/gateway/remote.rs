//! Remote chat-completion backend over HTTP.
//!
//! POSTs a chat-completion-style JSON body to a configurable endpoint,
//! retrying transient failures with exponential backoff and bounding the
//! number of in-flight requests per backend.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{Backend, ChatReply, ChatRequest, FinishReason, GatewayError, Usage};

/// Counting gate limiting concurrent remote requests.
struct InFlightGate {
    available: Mutex<usize>,
    cond: Condvar,
}

impl InFlightGate {
    fn new(max: usize) -> Self {
        Self {
            available: Mutex::new(max.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut available = self.available.lock().expect("gate poisoned");
        while *available == 0 {
            available = self.cond.wait(available).expect("gate poisoned");
        }
        *available -= 1;
        InFlightPermit { gate: self }
    }
}

struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut available = self.gate.available.lock().expect("gate poisoned");
        *available += 1;
        self.gate.cond.notify_one();
    }
}

pub struct RemoteBackend {
    name: String,
    endpoint: String,
    headers: Vec<(String, String)>,
    model_id: String,
    attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl RemoteBackend {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        headers: Vec<(String, String)>,
        model_id: impl Into<String>,
        max_in_flight: usize,
        timeout: Duration,
        attempts: u32,
        backoff: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config {
                field: "timeout_s".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            name: name.into(),
            endpoint: endpoint.into(),
            headers,
            model_id: model_id.into(),
            attempts: attempts.max(1),
            backoff,
            client,
            gate: InFlightGate::new(max_in_flight),
        })
    }

    fn send_once(
        &self,
        request: &ChatRequest,
    ) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let model = if request.model_id.is_empty() {
            &self.model_id
        } else {
            &request.model_id
        };
        let body = json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        for (k, v) in &self.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        req.send()
    }

    fn parse_reply(body: &str, latency_ms: u64) -> Result<ChatReply, GatewayError> {
        let wire: WireReply = serde_json::from_str(body).map_err(|e| GatewayError::Protocol {
            message: format!("{e} in {}", truncate(body, 200)),
        })?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or(GatewayError::Protocol {
                message: "no choices in response".into(),
            })?;
        let finish_reason = match choice.finish_reason.as_deref() {
            // An empty completion cannot count as a clean stop.
            Some("stop") | None if choice.message.content.is_empty() => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        let usage = wire.usage.unwrap_or_default();
        Ok(ChatReply {
            content: choice.message.content,
            finish_reason,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency_ms,
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

fn retryable_status(status: reqwest::StatusCode) -> bool {
    status.is_server_error()
        || status == reqwest::StatusCode::TOO_MANY_REQUESTS
        || status == reqwest::StatusCode::REQUEST_TIMEOUT
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let mut last_error = String::new();
        let mut timed_out = false;

        for attempt in 1..=self.attempts {
            if attempt > 1 {
                // 1x, 2x, 4x... of the base backoff.
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            match self.send_once(request) {
                Ok(response) => {
                    let status = response.status();
                    if retryable_status(status) {
                        last_error = format!("server returned {status}");
                        timed_out = false;
                        continue;
                    }
                    let body = response.text().map_err(|e| GatewayError::Protocol {
                        message: e.to_string(),
                    })?;
                    if !status.is_success() {
                        // Non-retryable client error.
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message: format!("{status}: {}", truncate(&body, 200)),
                        });
                    }
                    let latency_ms = started.elapsed().as_millis() as u64;
                    return Self::parse_reply(&body, latency_ms);
                }
                Err(e) => {
                    timed_out = e.is_timeout();
                    last_error = e.to_string();
                }
            }
        }

        if timed_out {
            Err(GatewayError::Timeout {
                attempts: self.attempts,
            })
        } else {
            Err(GatewayError::Transport {
                attempts: self.attempts,
                message: last_error,
            })
        }
    }
}
