//! Chat-completion gateway: the single abstraction every LLM-dependent stage
//! goes through. Ships an OpenAI-compatible HTTP client with retries and a
//! deterministic scripted stub for offline runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider does not return logprobs but the request requires them")]
    LogprobsUnsupported,
    #[error("no stub rule matches request starting with '{prompt_prefix}'")]
    UnmatchedStubRule { prompt_prefix: String },
    #[error("gateway not configured: {0}")]
    NotConfigured(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub want_logprobs: bool,
    pub top_logprobs_k: u32,
}

impl ChatRequest {
    pub fn new(system_prompt: &str, user_prompt: &str) -> Self {
        ChatRequest {
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            max_tokens: 1024,
            temperature: 0.0,
            want_logprobs: false,
            top_logprobs_k: 0,
        }
    }

    pub fn with_logprobs(mut self, top_k: u32) -> Self {
        assert!(top_k >= 2, "top_logprobs_k must be >= 2");
        self.want_logprobs = true;
        self.top_logprobs_k = top_k;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Top logprob candidates for the first generated token, sorted by
    /// logprob descending. Present iff requested and supported.
    pub first_token_logprobs: Option<Vec<TokenLogprob>>,
    pub usage: Usage,
}

pub trait ChatGateway: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Bounded-concurrency fan-out. Responses come back in request order; at most
/// `max_in_flight` requests are outstanding at any instant, enforced with a
/// counting semaphore shared across worker threads.
pub fn complete_many(
    gateway: &dyn ChatGateway,
    requests: &[ChatRequest],
    max_in_flight: usize,
) -> Vec<Result<ChatResponse, GatewayError>> {
    assert!(max_in_flight >= 1, "max_in_flight must be >= 1");
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<ChatResponse, GatewayError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    let workers = max_in_flight.min(requests.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let result = gateway.complete(&requests[i]);
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

/// One scripted response: the first rule whose `match` is a substring of the
/// request's user prompt (or, failing that, its system prompt) wins. System
/// prompts participate so that calls whose user prompts render identically
/// can still be told apart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(rename = "match")]
    pub matcher: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_logprobs: Option<BTreeMap<String, f64>>,
    /// Simulated latency, for concurrency tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

/// Deterministic scripted gateway. Pure: identical scripts and requests yield
/// identical responses. Counts calls so tests can assert retry behavior.
pub struct StubGateway {
    rules: Vec<StubRule>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl StubGateway {
    pub fn new(rules: Vec<StubRule>) -> Self {
        StubGateway {
            rules,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn from_script_file(path: &Path) -> Result<Self, GatewayError> {
        let rules: Vec<StubRule> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::new(rules))
    }

    pub fn rule(matcher: &str, text: &str) -> StubRule {
        StubRule {
            matcher: matcher.to_string(),
            text: text.to_string(),
            first_token_logprobs: None,
            delay_ms: None,
        }
    }

    pub fn logprob_rule(matcher: &str, text: &str, logprobs: &[(&str, f64)]) -> StubRule {
        StubRule {
            matcher: matcher.to_string(),
            text: text.to_string(),
            first_token_logprobs: Some(
                logprobs.iter().map(|(t, l)| (t.to_string(), *l)).collect(),
            ),
            delay_ms: None,
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_concurrency(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl ChatGateway for StubGateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(current, Ordering::SeqCst);
        let result = (|| {
            let rule = self
                .rules
                .iter()
                .find(|r| {
                    request.user_prompt.contains(&r.matcher)
                        || request.system_prompt.contains(&r.matcher)
                })
                .ok_or_else(|| GatewayError::UnmatchedStubRule {
                    prompt_prefix: request.user_prompt.chars().take(60).collect(),
                })?;
            if let Some(ms) = rule.delay_ms {
                std::thread::sleep(Duration::from_millis(ms));
            }
            let first_token_logprobs = if request.want_logprobs {
                let map = rule
                    .first_token_logprobs
                    .as_ref()
                    .ok_or(GatewayError::LogprobsUnsupported)?;
                let mut pairs: Vec<TokenLogprob> = map
                    .iter()
                    .map(|(token, &logprob)| TokenLogprob {
                        token: token.clone(),
                        logprob,
                    })
                    .collect();
                pairs.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).unwrap());
                Some(pairs)
            } else {
                None
            };
            Ok(ChatResponse {
                text: rule.text.clone(),
                first_token_logprobs,
                usage: Usage::default(),
            })
        })();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Retry policy for the HTTP gateway: retry only transport errors, 5xx and
/// 429, with exponential backoff.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpGateway {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    client: reqwest::blocking::Client,
    bound: Semaphore,
}

impl HttpGateway {
    pub fn new(base_url: &str, api_key: Option<&str>, model: &str, max_in_flight: usize) -> Self {
        HttpGateway {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.map(str::to_string),
            model: model.to_string(),
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::new(),
            bound: Semaphore::new(max_in_flight.max(1)),
        }
    }

    /// Reads `LLM_BASE_URL`, `LLM_API_KEY`, `LLM_MODEL`, `LLM_MAX_IN_FLIGHT`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base_url = std::env::var("LLM_BASE_URL")
            .map_err(|_| GatewayError::NotConfigured("LLM_BASE_URL is not set".into()))?;
        let api_key = std::env::var("LLM_API_KEY").ok();
        let model = std::env::var("LLM_MODEL")
            .map_err(|_| GatewayError::NotConfigured("LLM_MODEL is not set".into()))?;
        let max_in_flight = std::env::var("LLM_MAX_IN_FLIGHT")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(4);
        Ok(Self::new(&base_url, api_key.as_deref(), &model, max_in_flight))
    }

    fn call_once(&self, request: &ChatRequest) -> Result<ChatResponse, RetryClass> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.want_logprobs {
            body["logprobs"] = serde_json::json!(true);
            body["top_logprobs"] = serde_json::json!(request.top_logprobs_k);
        }
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| RetryClass::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(RetryClass::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(RetryClass::Fatal(GatewayError::BadResponse(format!(
                "status {status}"
            ))));
        }
        let json: serde_json::Value = resp
            .json()
            .map_err(|e| RetryClass::Fatal(GatewayError::BadResponse(e.to_string())))?;
        parse_chat_completion(&json, request.want_logprobs).map_err(RetryClass::Fatal)
    }
}

enum RetryClass {
    Retryable(String),
    Fatal(GatewayError),
}

fn parse_chat_completion(
    json: &serde_json::Value,
    want_logprobs: bool,
) -> Result<ChatResponse, GatewayError> {
    let choice = json["choices"]
        .get(0)
        .ok_or_else(|| GatewayError::BadResponse("no choices".into()))?;
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::BadResponse("missing message content".into()))?
        .to_string();
    let first_token_logprobs = if want_logprobs {
        let top = choice["logprobs"]["content"]
            .get(0)
            .and_then(|t| t["top_logprobs"].as_array())
            .ok_or(GatewayError::LogprobsUnsupported)?;
        let mut pairs: Vec<TokenLogprob> = top
            .iter()
            .filter_map(|entry| {
                Some(TokenLogprob {
                    token: entry["token"].as_str()?.to_string(),
                    logprob: entry["logprob"].as_f64()?,
                })
            })
            .collect();
        if pairs.is_empty() {
            return Err(GatewayError::LogprobsUnsupported);
        }
        pairs.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).unwrap());
        Some(pairs)
    } else {
        None
    };
    let usage = Usage {
        prompt_tokens: json["usage"]["prompt_tokens"].as_u64().unwrap_or(0) as u32,
        completion_tokens: json["usage"]["completion_tokens"].as_u64().unwrap_or(0) as u32,
    };
    Ok(ChatResponse {
        text,
        first_token_logprobs,
        usage,
    })
}

impl ChatGateway for HttpGateway {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _permit = self.bound.acquire();
        let mut backoff = Duration::from_millis(self.retry.initial_backoff_ms);
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.call_once(request) {
                Ok(resp) => return Ok(resp),
                Err(RetryClass::Fatal(e)) => return Err(e),
                Err(RetryClass::Retryable(msg)) => {
                    last_error = msg;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.max_attempts,
            message: last_error,
        })
    }
}

/// Minimal counting semaphore; the global in-flight bound for live endpoints.
struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cond.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}
