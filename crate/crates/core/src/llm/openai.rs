//! OpenAI-compatible chat-completions client (OpenRouter by default).
//!
//! Requests are always streamed with `stream_options.include_usage` so the
//! provider reports token usage in the final chunk; the deltas are folded
//! into a single [`ModelTurn`] before returning.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{CompletionRequest, ModelProvider, ModelTurn, ProviderError, TokenUsage, ToolCall};
use crate::session::{Message, Role};

pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENROUTER_API_KEY";

#[derive(Debug)]
pub struct TransportError {
    pub message: String,
    /// Connection resets, timeouts and similar conditions worth retrying.
    pub transient: bool,
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub struct HttpResponse {
    pub status: u16,
    pub body: Box<dyn Read + Send>,
}

/// The network boundary of the live provider.
pub trait HttpTransport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: Vec<u8>,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTPS transport backed by reqwest.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError {
                message: e.to_string(),
                transient: false,
            })?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: Vec<u8>,
    ) -> Result<HttpResponse, TransportError> {
        let mut request = self.client.post(url).body(body);
        for (name, value) in headers {
            request = request.header(name.as_str(), value.as_str());
        }
        let response = request.send().map_err(|e| TransportError {
            transient: e.is_timeout() || e.is_connect() || e.is_request(),
            message: e.to_string(),
        })?;
        Ok(HttpResponse {
            status: response.status().as_u16(),
            body: Box::new(response),
        })
    }
}

/// Retry schedule for transient failures: one initial attempt plus one
/// retry per delay.
#[derive(Clone)]
pub struct Backoff {
    pub delays: Vec<Duration>,
    pub sleep: Arc<dyn Fn(Duration) + Send + Sync>,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            delays: vec![
                Duration::from_millis(500),
                Duration::from_secs(2),
                Duration::from_secs(8),
            ],
            sleep: Arc::new(std::thread::sleep),
        }
    }
}

impl Backoff {
    /// Same schedule, but recorded instead of slept. For tests.
    pub fn instant(delays: Vec<Duration>) -> Self {
        Self {
            delays,
            sleep: Arc::new(|_| {}),
        }
    }
}

impl fmt::Debug for Backoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backoff").field("delays", &self.delays).finish()
    }
}

#[derive(Clone, Debug)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key_env: String,
    /// Explicit key; when unset the key is read from `api_key_env`.
    pub api_key: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub backoff: Backoff,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            api_key: None,
            temperature: None,
            max_tokens: None,
            backoff: Backoff::default(),
        }
    }
}

pub struct OpenAiCompatible {
    config: LiveConfig,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
}

impl OpenAiCompatible {
    /// Fails with a configuration error when no credential is available.
    /// Nothing is sent over the network here.
    pub fn new(config: LiveConfig, transport: Arc<dyn HttpTransport>) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key {
            Some(key) if !key.is_empty() => key.clone(),
            _ => std::env::var(&config.api_key_env)
                .ok()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| {
                    ProviderError::Config(format!(
                        "no API key: set the {} environment variable",
                        config.api_key_env
                    ))
                })?,
        };
        Ok(Self {
            config,
            api_key,
            transport,
        })
    }

    pub fn request_body(&self, request: &CompletionRequest<'_>) -> Value {
        let mut body = json!({
            "model": request.model,
            "messages": request.history.iter().map(wire_message).collect::<Vec<_>>(),
            "stream": true,
            "stream_options": { "include_usage": true },
        });
        if !request.schemas.is_empty() {
            body["tools"] = request
                .schemas
                .iter()
                .map(|s| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": s.name,
                            "description": s.description,
                            "parameters": s.parameters,
                        }
                    })
                })
                .collect();
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, url: &str, body: &[u8]) -> Result<ModelTurn, Attempt> {
        let headers = vec![
            ("Authorization".to_string(), format!("Bearer {}", self.api_key)),
            ("Content-Type".to_string(), "application/json".to_string()),
            ("Accept".to_string(), "text/event-stream".to_string()),
        ];
        let response = self
            .transport
            .post(url, &headers, body.to_vec())
            .map_err(|e| {
                if e.transient {
                    Attempt::Retry(e.message)
                } else {
                    Attempt::Fatal(ProviderError::Transport {
                        attempts: 1,
                        message: e.message,
                    })
                }
            })?;
        let status = response.status;
        if !(200..300).contains(&status) {
            let mut text = String::new();
            let _ = response.body.take(64 * 1024).read_to_string(&mut text);
            if status == 429 || status >= 500 {
                return Err(Attempt::RetryHttp(status, text));
            }
            return Err(Attempt::Fatal(ProviderError::Http { status, body: text }));
        }
        read_stream(response.body).map_err(|e| match e {
            StreamError::Io(message) => Attempt::Retry(message),
            StreamError::Decode(message) => Attempt::Fatal(ProviderError::Decode(message)),
        })
    }
}

enum Attempt {
    Retry(String),
    RetryHttp(u16, String),
    Fatal(ProviderError),
}

impl ModelProvider for OpenAiCompatible {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelTurn, ProviderError> {
        if request.history.is_empty() {
            return Err(ProviderError::Config("empty conversation history".into()));
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::to_vec(&self.request_body(request))
            .map_err(|e| ProviderError::Decode(e.to_string()))?;
        let max_attempts = self.config.backoff.delays.len() as u32 + 1;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let last_failure = match self.attempt(&url, &body) {
                Ok(turn) => {
                    debug!(
                        input = turn.usage.input_tokens,
                        output = turn.usage.output_tokens,
                        calls = turn.tool_calls.len(),
                        "model turn"
                    );
                    return Ok(turn);
                }
                Err(Attempt::Fatal(ProviderError::Transport { message, .. })) => {
                    return Err(ProviderError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(failure) => failure,
            };
            if attempt >= max_attempts {
                return Err(match last_failure {
                    Attempt::RetryHttp(status, body) => ProviderError::Http { status, body },
                    Attempt::Retry(message) => ProviderError::Transport {
                        attempts: attempt,
                        message,
                    },
                    Attempt::Fatal(e) => e,
                });
            }
            let delay = self.config.backoff.delays[attempt as usize - 1];
            warn!(attempt, ?delay, "transient model endpoint failure, retrying");
            (self.config.backoff.sleep)(delay);
        }
    }
}

fn wire_message(message: &Message) -> Value {
    match message.role {
        Role::System => json!({ "role": "system", "content": message.content }),
        Role::User => json!({ "role": "user", "content": message.content }),
        Role::Assistant => {
            let mut value = json!({ "role": "assistant", "content": message.content });
            if !message.tool_calls.is_empty() {
                value["tool_calls"] = message
                    .tool_calls
                    .iter()
                    .map(|c| {
                        json!({
                            "id": c.id,
                            "type": "function",
                            "function": { "name": c.name, "arguments": c.arguments },
                        })
                    })
                    .collect();
            }
            value
        }
        Role::ToolResult => json!({
            "role": "tool",
            "tool_call_id": message.tool_call_id,
            "content": message.content,
        }),
    }
}

enum StreamError {
    Io(String),
    Decode(String),
}

fn read_stream(body: Box<dyn Read + Send>) -> Result<ModelTurn, StreamError> {
    let mut reader = BufReader::new(body);
    let mut aggregator = SseAggregator::default();
    let mut line = String::new();
    let mut whole = String::new();
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| StreamError::Io(e.to_string()))?;
        if n == 0 {
            break;
        }
        if !aggregator.saw_events() && whole.len() < 16 * 1024 * 1024 {
            whole.push_str(&line);
        }
        if aggregator.push_line(&line).map_err(StreamError::Decode)? {
            break;
        }
    }
    if aggregator.saw_events() {
        return Ok(aggregator.finish());
    }
    // Some endpoints ignore `stream: true`; accept a plain completion object.
    let trimmed = whole.trim();
    if trimmed.is_empty() {
        return Err(StreamError::Io("empty response body".into()));
    }
    let value: Value =
        serde_json::from_str(trimmed).map_err(|e| StreamError::Decode(e.to_string()))?;
    completion_to_turn(&value).map_err(StreamError::Decode)
}

fn completion_to_turn(value: &Value) -> Result<ModelTurn, String> {
    if let Some(err) = value.get("error") {
        return Err(format!("provider error: {err}"));
    }
    let choice = value
        .pointer("/choices/0")
        .ok_or_else(|| "response has no choices".to_string())?;
    let message = &choice["message"];
    let mut calls = Vec::new();
    if let Some(list) = message["tool_calls"].as_array() {
        for (i, c) in list.iter().enumerate() {
            calls.push(ToolCall {
                id: c["id"].as_str().map(str::to_string).unwrap_or_else(|| format!("call_{i}")),
                name: c.pointer("/function/name").and_then(Value::as_str).unwrap_or_default().into(),
                arguments: c
                    .pointer("/function/arguments")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .into(),
            });
        }
    }
    Ok(ModelTurn {
        text: message["content"].as_str().unwrap_or_default().to_string(),
        tool_calls: dedupe_ids(calls),
        usage: usage_from(&value["usage"]).unwrap_or_default(),
        finish_reason: choice["finish_reason"].as_str().map(str::to_string),
    })
}

fn usage_from(value: &Value) -> Option<TokenUsage> {
    let input = value.get("prompt_tokens")?.as_u64()?;
    let output = value.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0);
    Some(TokenUsage {
        input_tokens: input,
        output_tokens: output,
    })
}

fn dedupe_ids(mut calls: Vec<ToolCall>) -> Vec<ToolCall> {
    let mut seen = std::collections::HashSet::new();
    for (i, call) in calls.iter_mut().enumerate() {
        if call.id.is_empty() {
            call.id = format!("call_{i}");
        }
        while !seen.insert(call.id.clone()) {
            call.id = format!("{}_{i}", call.id);
        }
    }
    calls
}

#[derive(Default)]
struct PartialCall {
    id: String,
    name: String,
    arguments: String,
}

/// Folds server-sent chat-completion chunks into one turn.
#[derive(Default)]
pub struct SseAggregator {
    text: String,
    calls: BTreeMap<u64, PartialCall>,
    usage: Option<TokenUsage>,
    finish_reason: Option<String>,
    events: usize,
}

impl SseAggregator {
    pub fn saw_events(&self) -> bool {
        self.events > 0
    }

    /// Consumes one line of the event stream. Returns `true` on `[DONE]`.
    pub fn push_line(&mut self, line: &str) -> Result<bool, String> {
        let line = line.trim_end_matches(['\r', '\n']);
        let Some(data) = line.strip_prefix("data:") else {
            // Comments (": keep-alive"), event names and blank separators.
            if line.starts_with(':') || line.starts_with("event:") {
                self.events += 1;
            }
            return Ok(false);
        };
        self.events += 1;
        let data = data.trim();
        if data == "[DONE]" {
            return Ok(true);
        }
        let chunk: Value = serde_json::from_str(data).map_err(|e| format!("bad chunk: {e}"))?;
        if let Some(err) = chunk.get("error") {
            return Err(format!("provider error: {err}"));
        }
        if let Some(usage) = usage_from(&chunk["usage"]) {
            self.usage = Some(usage);
        }
        let Some(choice) = chunk.pointer("/choices/0") else {
            return Ok(false);
        };
        if let Some(reason) = choice["finish_reason"].as_str() {
            self.finish_reason = Some(reason.to_string());
        }
        let delta = &choice["delta"];
        if let Some(text) = delta["content"].as_str() {
            self.text.push_str(text);
        }
        if let Some(calls) = delta["tool_calls"].as_array() {
            for (pos, c) in calls.iter().enumerate() {
                let index = c["index"].as_u64().unwrap_or(pos as u64);
                let entry = self.calls.entry(index).or_default();
                if let Some(id) = c["id"].as_str().filter(|s| !s.is_empty()) {
                    entry.id = id.to_string();
                }
                if let Some(name) = c.pointer("/function/name").and_then(Value::as_str) {
                    if entry.name.is_empty() {
                        entry.name = name.to_string();
                    }
                }
                if let Some(args) = c.pointer("/function/arguments").and_then(Value::as_str) {
                    entry.arguments.push_str(args);
                }
            }
        }
        Ok(false)
    }

    pub fn finish(self) -> ModelTurn {
        let calls = self
            .calls
            .into_values()
            .map(|p| ToolCall {
                id: p.id,
                name: p.name,
                arguments: p.arguments,
            })
            .collect();
        ModelTurn {
            text: self.text,
            tool_calls: dedupe_ids(calls),
            usage: self.usage.unwrap_or_default(),
            finish_reason: self.finish_reason,
        }
    }
}
