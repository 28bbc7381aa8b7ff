//! HTTP clients for a served Stage-1 scorer and a chat model.
//!
//! Wire formats:
//! - `POST {endpoint}/score` `{"text": str}` -> `{"prob_suicide": float}`
//! - `POST {endpoint}/chat` `{"system": str, "user": str}` -> `{"content": str}`

use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatClient, Scorer};
use crate::data::Probability;
use crate::error::{Error, Result};

/// Credentials for remote services are read from this variable only.
pub const API_KEY_ENV: &str = "RISKCASCADE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before retry k is `base_delay_ms * 2^k`.
    pub base_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 200,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << retry.min(20)))
    }
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

#[derive(Clone)]
struct JsonEndpoint {
    url: String,
    client: reqwest::blocking::Client,
    policy: RetryPolicy,
    api_key: Option<String>,
}

impl JsonEndpoint {
    fn new(base: &str, route: &str, policy: RetryPolicy) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(policy.timeout_ms))
            .build()
            .expect("http client builds");
        JsonEndpoint {
            url: format!("{}/{}", base.trim_end_matches('/'), route),
            client,
            policy,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<Value, Failure> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("{} returned HTTP {status}", self.url)));
        }
        if status >= 300 {
            return Err(Failure::Fatal(Error::Protocol(format!("{} returned HTTP {status}", self.url))));
        }
        resp.json::<Value>()
            .map_err(|e| Failure::Fatal(Error::Protocol(format!("invalid JSON body from {}: {e}", self.url))))
    }

    /// POSTs with exponential backoff on transport failures, 429 and 5xx.
    fn post(&self, body: &Value) -> Result<Value> {
        let mut last = String::new();
        for attempt in 0..=self.policy.max_retries {
            if attempt > 0 {
                thread::sleep(self.policy.delay(attempt - 1));
            }
            match self.attempt(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!("request to {} failed (attempt {}): {msg}", self.url, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "{} unreachable after {} attempt(s): {last}",
            self.url,
            self.policy.max_retries + 1
        )))
    }
}

/// Stage-1 scorer served over HTTP.
#[derive(Clone)]
pub struct RemoteScorer {
    endpoint: JsonEndpoint,
}

impl RemoteScorer {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Self {
        RemoteScorer {
            endpoint: JsonEndpoint::new(endpoint, "score", policy),
        }
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, text: &str) -> Result<Probability> {
        let v = self.endpoint.post(&json!({ "text": text }))?;
        let p = v
            .get("prob_suicide")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Protocol(format!("missing numeric `prob_suicide` in {v}")))?;
        Probability::new(p).map_err(|_| Error::Protocol(format!("`prob_suicide` out of range: {p}")))
    }
}

/// One-shot convenience over [`RemoteScorer`].
pub fn remote_score(endpoint: &str, text: &str, policy: &RetryPolicy) -> Result<Probability> {
    RemoteScorer::new(endpoint, policy.clone()).score(text)
}

/// Chat model served over HTTP with the generic two-message shape.
#[derive(Clone)]
pub struct RemoteChatClient {
    endpoint: JsonEndpoint,
}

impl RemoteChatClient {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Self {
        RemoteChatClient {
            endpoint: JsonEndpoint::new(endpoint, "chat", policy),
        }
    }
}

impl ChatClient for RemoteChatClient {
    fn chat(&self, system: &str, user: &str) -> Result<String> {
        let v = self.endpoint.post(&json!({ "system": system, "user": user }))?;
        v.get("content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol(format!("missing string `content` in {v}")))
    }
}
