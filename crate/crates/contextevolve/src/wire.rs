//! Chat-completions HTTP provider.
//!
//! Each agent role may point at its own endpoint and key through
//! `CONTEXTEVOLVE_<ROLE>_BASE_URL` / `CONTEXTEVOLVE_<ROLE>_API_KEY`, falling
//! back to `CONTEXTEVOLVE_BASE_URL` / `CONTEXTEVOLVE_API_KEY`.

use std::time::{Duration, Instant};

use contextevolve_core::llm::{AgentRole, CompletionRequest, LlmError, Provider, ProviderReply};
use contextevolve_core::rng::mix64;
use contextevolve_core::record::code_hash;
use serde::Deserialize;
use serde_json::json;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: Option<String>,
}

impl Endpoint {
    /// Endpoint for `role` from the process environment.
    pub fn from_env(role: AgentRole) -> Self {
        Self::from_lookup(role, |k| std::env::var(k).ok())
    }

    pub fn from_lookup(role: AgentRole, get: impl Fn(&str) -> Option<String>) -> Self {
        let upper = role.as_str().to_ascii_uppercase();
        let pick = |suffix: &str| {
            get(&format!("CONTEXTEVOLVE_{upper}_{suffix}"))
                .or_else(|| get(&format!("CONTEXTEVOLVE_{suffix}")))
                .filter(|v| !v.is_empty())
        };
        Endpoint {
            base_url: pick("BASE_URL").unwrap_or_else(|| DEFAULT_BASE_URL.into()),
            api_key: pick("API_KEY"),
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    /// Relative jitter, 0.2 means ±20%.
    pub jitter: f64,
    pub max_attempts: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_secs(1), factor: 2.0, jitter: 0.2, max_attempts: 5 }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based), jittered deterministically by `salt`.
    pub fn delay(&self, retry: u32, salt: u64) -> Duration {
        let unit = (mix64(salt ^ u64::from(retry)) >> 11) as f64 / (1u64 << 53) as f64;
        let scale = 1.0 + self.jitter * (2.0 * unit - 1.0);
        self.base.mul_f64(self.factor.powi(retry as i32) * scale)
    }
}

pub struct WireProvider {
    agent: ureq::Agent,
    endpoints: Vec<(AgentRole, Endpoint)>,
    backoff: Backoff,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Attempt {
    Done(ProviderReply),
    Retry(String),
    Fatal(LlmError),
}

impl WireProvider {
    pub fn from_env(request_timeout: Duration) -> Self {
        let endpoints = AgentRole::ALL.iter().map(|r| (*r, Endpoint::from_env(*r))).collect();
        Self::new(endpoints, request_timeout, Backoff::default())
    }

    pub fn new(endpoints: Vec<(AgentRole, Endpoint)>, request_timeout: Duration, backoff: Backoff) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(request_timeout))
            .http_status_as_error(false)
            .build();
        WireProvider { agent: ureq::Agent::new_with_config(config), endpoints, backoff }
    }

    fn endpoint(&self, role: AgentRole) -> Result<&Endpoint, LlmError> {
        self.endpoints
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, e)| e)
            .ok_or_else(|| LlmError::Auth(format!("no endpoint configured for {}", role.as_str())))
    }

    fn attempt(&self, endpoint: &Endpoint, request: &CompletionRequest) -> Attempt {
        let body = json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "n": 1,
        });
        let started = Instant::now();
        let mut req = self.agent.post(endpoint.url()).header("X-Request-Id", &request.request_id);
        if let Some(key) = &endpoint.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(LlmError::Auth(format!("http status {status}"))),
            408 | 429 | 500..=599 => return Attempt::Retry(format!("http status {status}")),
            _ => {
                return Attempt::Fatal(LlmError::Backend { message: format!("http status {status}"), attempts: 0 })
            }
        }
        let reply: ChatReply = match resp.body_mut().read_json() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Fatal(LlmError::Backend { message: format!("malformed reply: {e}"), attempts: 0 })
            }
        };
        let text = reply.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
        Attempt::Done(ProviderReply {
            text,
            usage: reply.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
            latency_ms: started.elapsed().as_millis() as u64,
            attempts: 0,
        })
    }
}

impl Provider for WireProvider {
    fn send(&mut self, request: &CompletionRequest) -> Result<ProviderReply, LlmError> {
        let endpoint = self.endpoint(request.role)?.clone();
        let max_attempts = (request.retry_budget + 1).min(self.backoff.max_attempts).max(1);
        let salt = code_hash(&request.request_id);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(&endpoint, request) {
                Attempt::Done(mut reply) => {
                    reply.attempts = attempt;
                    return Ok(reply);
                }
                Attempt::Fatal(LlmError::Backend { message, .. }) => {
                    return Err(LlmError::Backend { message, attempts: attempt })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::debug!("{} attempt {attempt} failed: {msg}", request.role.as_str());
                    last = msg;
                    if attempt < max_attempts {
                        std::thread::sleep(self.backoff.delay(attempt - 1, salt));
                    }
                }
            }
        }
        Err(LlmError::Backend { message: last, attempts: max_attempts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_specific_env_wins() {
        let env = |k: &str| match k {
            "CONTEXTEVOLVE_NAVIGATOR_BASE_URL" => Some("http://nav".to_string()),
            "CONTEXTEVOLVE_BASE_URL" => Some("http://shared".to_string()),
            "CONTEXTEVOLVE_API_KEY" => Some("k".to_string()),
            _ => None,
        };
        let nav = Endpoint::from_lookup(AgentRole::Navigator, env);
        assert_eq!(nav.base_url, "http://nav");
        assert_eq!(nav.api_key.as_deref(), Some("k"));
        let gen = Endpoint::from_lookup(AgentRole::Generator, env);
        assert_eq!(gen.base_url, "http://shared");
        assert_eq!(Endpoint::from_lookup(AgentRole::Sampler, |_| None).base_url, DEFAULT_BASE_URL);
    }

    #[test]
    fn backoff_grows_within_jitter() {
        let b = Backoff::default();
        for retry in 0..4 {
            let nominal = 2f64.powi(retry as i32);
            for salt in 0..50 {
                let d = b.delay(retry, salt).as_secs_f64();
                assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9, "{d} vs {nominal}");
            }
        }
    }
}
