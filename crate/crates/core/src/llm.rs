//! Provider abstraction and token accounting.
//!
//! [`Llm`] is the single choke point every agent call goes through: it fills
//! in per-role sampling parameters, enforces the optional token budget before
//! sending, falls back to the heuristic counter when the provider reports no
//! usage, and appends to the [`UsageLedger`].

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::mix64;
use crate::tokens::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Summarizer,
    Navigator,
    Sampler,
    Generator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [AgentRole::Summarizer, AgentRole::Navigator, AgentRole::Sampler, AgentRole::Generator];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Summarizer => "summarizer",
            AgentRole::Navigator => "navigator",
            AgentRole::Sampler => "sampler",
            AgentRole::Generator => "generator",
        }
    }
}

/// Sampling parameters for one agent role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleProfile {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Extra attempts after a transient provider failure.
    pub retry_budget: u32,
}

impl RoleProfile {
    fn with(temperature: f64, max_output_tokens: u32) -> Self {
        RoleProfile { model: "default".into(), temperature, max_output_tokens, retry_budget: 4 }
    }
}

impl Default for RoleProfile {
    fn default() -> Self {
        RoleProfile::with(0.7, 1024)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentProfiles {
    pub summarizer: RoleProfile,
    pub navigator: RoleProfile,
    pub sampler: RoleProfile,
    pub generator: RoleProfile,
}

impl Default for AgentProfiles {
    fn default() -> Self {
        AgentProfiles {
            summarizer: RoleProfile::with(0.2, 512),
            navigator: RoleProfile::with(0.7, 512),
            sampler: RoleProfile::with(0.2, 128),
            generator: RoleProfile::with(0.8, 4096),
        }
    }
}

impl AgentProfiles {
    pub fn get(&self, role: AgentRole) -> &RoleProfile {
        match role {
            AgentRole::Summarizer => &self.summarizer,
            AgentRole::Navigator => &self.navigator,
            AgentRole::Sampler => &self.sampler,
            AgentRole::Generator => &self.generator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retry_budget: u32,
    pub request_id: String,
}

/// What a provider hands back; usage is `None` when the provider did not report it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<(u64, u64)>,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub provider_reported: bool,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { message: String, attempts: u32 },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("token budget exhausted: {used} used, next call needs ~{needed} of {budget}")]
    BudgetExhausted { used: u64, needed: u64, budget: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
}

pub trait Provider {
    fn send(&mut self, request: &CompletionRequest) -> Result<ProviderReply, LlmError>;

    /// Called when a run is resumed from a log whose calls produced `ledger`.
    fn resume_from(&mut self, _ledger: &UsageLedger) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

impl Usage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
    }

    /// `self - earlier`, for usage accrued between two ledger snapshots.
    pub fn since(&self, earlier: &Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
            calls: self.calls - earlier.calls,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Usage::default()
    }
}

/// Append-only per-role usage totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UsageLedger {
    per_role: BTreeMap<AgentRole, Usage>,
}

impl UsageLedger {
    pub fn record(&mut self, role: AgentRole, usage: &Usage) {
        self.per_role.entry(role).or_default().add(usage);
    }

    pub fn role(&self, role: AgentRole) -> Usage {
        self.per_role.get(&role).copied().unwrap_or_default()
    }

    pub fn total(&self) -> Usage {
        let mut t = Usage::default();
        self.per_role.values().for_each(|u| t.add(u));
        t
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (role, u) in &other.per_role {
            self.record(*role, u);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentRole, Usage)> + '_ {
        self.per_role.iter().map(|(r, u)| (*r, *u))
    }
}

pub type Tracer = Box<dyn FnMut(&CompletionRequest, &Result<CompletionResponse, LlmError>)>;

pub struct Llm {
    provider: Box<dyn Provider>,
    profiles: AgentProfiles,
    ledger: UsageLedger,
    budget: Option<u64>,
    id_seed: u64,
    issued: u64,
    tracer: Option<Tracer>,
}

impl Llm {
    pub fn new(provider: Box<dyn Provider>, profiles: AgentProfiles) -> Self {
        Llm { provider, profiles, ledger: UsageLedger::default(), budget: None, id_seed: 0, issued: 0, tracer: None }
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.budget = budget;
        self
    }

    /// Request ids are derived from this seed and a call counter.
    pub fn with_request_seed(mut self, seed: u64) -> Self {
        self.id_seed = seed;
        self
    }

    pub fn set_tracer(&mut self, tracer: Tracer) {
        self.tracer = Some(tracer);
    }

    pub fn profiles(&self) -> &AgentProfiles {
        &self.profiles
    }

    pub fn usage_ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    /// Restores accounting from a previous session and informs the provider.
    pub fn resume_from(&mut self, ledger: UsageLedger) {
        self.provider.resume_from(&ledger);
        self.issued = ledger.total().calls;
        self.ledger = ledger;
    }

    fn next_request_id(&mut self) -> String {
        let hi = mix64(self.id_seed ^ mix64(self.issued));
        let lo = mix64(hi ^ self.issued);
        self.issued += 1;
        // RFC 4122 version 4 layout
        let hi = (hi & 0xffff_ffff_ffff_0fff) | 0x0000_0000_0000_4000;
        let lo = (lo & 0x3fff_ffff_ffff_ffff) | 0x8000_0000_0000_0000;
        format!(
            "{:08x}-{:04x}-{:04x}-{:04x}-{:012x}",
            hi >> 32,
            (hi >> 16) & 0xffff,
            hi & 0xffff,
            lo >> 48,
            lo & 0xffff_ffff_ffff
        )
    }

    pub fn complete(&mut self, role: AgentRole, system: &str, user: &str) -> Result<CompletionResponse, LlmError> {
        if user.is_empty() {
            return Err(LlmError::InvalidRequest("user text is empty"));
        }
        let profile = self.profiles.get(role).clone();
        if profile.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be >= 1"));
        }
        let estimate = count_tokens(system) + count_tokens(user);
        if let Some(budget) = self.budget {
            let used = self.ledger.total().total_tokens();
            if used + estimate > budget {
                return Err(LlmError::BudgetExhausted { used, needed: estimate, budget });
            }
        }
        let request = CompletionRequest {
            role,
            model: profile.model,
            system: system.into(),
            user: user.into(),
            temperature: profile.temperature,
            max_output_tokens: profile.max_output_tokens,
            retry_budget: profile.retry_budget,
            request_id: self.next_request_id(),
        };
        let result = self.provider.send(&request).map(|reply| {
            let (prompt_tokens, completion_tokens, provider_reported) = match reply.usage {
                Some((p, c)) => (p, c, true),
                None => (estimate, count_tokens(&reply.text), false),
            };
            CompletionResponse {
                text: reply.text,
                prompt_tokens,
                completion_tokens,
                provider_reported,
                latency_ms: reply.latency_ms,
                attempts: reply.attempts,
            }
        });
        if let Ok(resp) = &result {
            self.ledger.record(
                role,
                &Usage { prompt_tokens: resp.prompt_tokens, completion_tokens: resp.completion_tokens, calls: 1 },
            );
        }
        if let Some(trace) = self.tracer.as_mut() {
            trace(&request, &result);
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{MockProvider, MockScript};

    #[test]
    fn ledger_sums_calls() {
        let mut l = UsageLedger::default();
        assert_eq!(l.total(), Usage::default());
        l.record(AgentRole::Generator, &Usage { prompt_tokens: 10, completion_tokens: 5, calls: 1 });
        l.record(AgentRole::Generator, &Usage { prompt_tokens: 7, completion_tokens: 2, calls: 1 });
        l.record(AgentRole::Summarizer, &Usage { prompt_tokens: 1, completion_tokens: 1, calls: 1 });
        assert_eq!(l.total(), Usage { prompt_tokens: 18, completion_tokens: 8, calls: 3 });
        assert_eq!(l.role(AgentRole::Generator).calls, 2);
        assert_eq!(l.role(AgentRole::Summarizer).calls, 1);
        assert_eq!(l.role(AgentRole::Navigator), Usage::default());
    }

    #[test]
    fn heuristic_counts_when_provider_is_silent() {
        let script = MockScript::always("```\nx=1\n```");
        let mut llm = Llm::new(Box::new(MockProvider::new(script)), AgentProfiles::default());
        let r = llm.complete(AgentRole::Generator, "sys!", "user text").unwrap();
        assert!(!r.provider_reported);
        assert_eq!(r.prompt_tokens, count_tokens("sys!") + count_tokens("user text"));
        assert_eq!(r.completion_tokens, count_tokens("```\nx=1\n```"));
        assert_eq!(llm.usage_ledger().total().calls, 1);
    }

    #[test]
    fn budget_blocks_calls_that_would_overrun() {
        let mut llm = Llm::new(Box::new(MockProvider::new(MockScript::always("ok"))), AgentProfiles::default())
            .with_budget(Some(5));
        llm.complete(AgentRole::Navigator, "", "abcdefgh").unwrap(); // 2 + 1 tokens
        let err = llm.complete(AgentRole::Navigator, "", "abcdefghijkl").unwrap_err();
        assert!(matches!(err, LlmError::BudgetExhausted { used: 3, needed: 3, budget: 5 }));
        assert_eq!(llm.usage_ledger().total().calls, 1);
    }

    #[test]
    fn request_ids_are_deterministic_uuids() {
        let mk = || Llm::new(Box::new(MockProvider::new(MockScript::always("ok"))), AgentProfiles::default()).with_request_seed(9);
        let (mut a, mut b) = (mk(), mk());
        let ia = a.next_request_id();
        assert_eq!(ia, b.next_request_id());
        assert_eq!(ia.len(), 36);
        assert_eq!(&ia[14..15], "4");
        assert_ne!(ia, a.next_request_id());
    }

    #[test]
    fn empty_user_text_rejected() {
        let mut llm = Llm::new(Box::new(MockProvider::new(MockScript::always("ok"))), AgentProfiles::default());
        assert!(matches!(llm.complete(AgentRole::Sampler, "s", ""), Err(LlmError::InvalidRequest(_))));
    }
}
