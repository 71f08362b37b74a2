//! Chat-completions client with greedy decoding, retries and a cap on
//! in-flight requests.
//!
//! Wire format: `POST {base_url}/chat/completions` with body
//! `{"model": .., "messages": [{"role": "user", "content": prompt}], "temperature": 0}`;
//! the answer is `choices[0].message.content`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentBackend, AgentError, BackendIdentity, RequestContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt on transport errors, 429 and 5xx.
    pub retry_budget: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    pub max_concurrency: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 120,
            retry_budget: 3,
            backoff_ms: 500,
            max_concurrency: 4,
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
    next_id: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(AgentError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, AgentError> {
        if config.model.is_empty() {
            return Err(AgentError::Config("model name is required".into()));
        }
        if config.max_concurrency == 0 {
            return Err(AgentError::Config("max_concurrency must be at least 1".into()));
        }
        let token = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| AgentError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limit = config.max_concurrency;
        Ok(Self {
            config,
            token,
            agent,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
            next_id: AtomicU64::new(0),
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &str, correlation_id: &str) -> Attempt {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self.agent.post(&self.url()).header("X-Request-Id", correlation_id);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status == 429 || (500..600).contains(&status) {
            return Attempt::Retry(format!("status {status}: {text}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(AgentError::Endpoint { status, body: text });
        }
        let content = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string));
        match content {
            Some(c) => Attempt::Done(c),
            None => Attempt::Fatal(AgentError::Endpoint { status, body: text }),
        }
    }
}

impl AgentBackend for HttpBackend {
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError> {
        let _slot = self.gate.enter();
        let correlation_id = format!(
            "{}-{}-{}",
            ctx.persona_id,
            ctx.attempt,
            self.next_id.fetch_add(1, Ordering::Relaxed)
        );
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.retry_budget {
            if attempt > 0 {
                log::warn!("request {correlation_id}: retry {attempt} after {last}");
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(prompt, &correlation_id) {
                Attempt::Done(text) => {
                    log::debug!("request {correlation_id}: ok");
                    return Ok(text);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(AgentError::Transport {
            attempts: self.config.retry_budget + 1,
            message: last,
        })
    }

    fn identity(&self) -> BackendIdentity {
        // the token itself never enters the digest
        BackendIdentity::new(
            "http",
            &json!({"base_url": self.config.base_url, "model": self.config.model, "temperature": 0}),
        )
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_concurrency
    }
}
