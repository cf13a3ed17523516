//! Scripted provider for tests and golden runs.
//!
//! Rules are tried in order; the first whose role and substring match answers
//! the call. A rule with several responses cycles through them by the number
//! of earlier successful calls made for that role, which keeps replies a pure
//! function of the call history and lets a resumed run pick up where the
//! interrupted one stopped.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::llm::{AgentRole, CompletionRequest, LlmError, Provider, ProviderReply, UsageLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Responses {
    One(String),
    Many(Vec<String>),
}

impl Responses {
    fn pick(&self, n: u64) -> Option<&str> {
        match self {
            Responses::One(s) => Some(s),
            Responses::Many(v) if v.is_empty() => None,
            Responses::Many(v) => Some(&v[(n % v.len() as u64) as usize]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// `None` matches every role.
    #[serde(default)]
    pub role: Option<AgentRole>,
    /// Substring of the user text; `None` matches anything.
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default, alias = "response")]
    pub responses: Option<Responses>,
    /// When set the rule answers with a backend error carrying this message.
    #[serde(default)]
    pub fail: Option<String>,
}

impl MockRule {
    pub fn reply(role: Option<AgentRole>, text: &str) -> Self {
        MockRule { role, contains: None, responses: Some(Responses::One(text.into())), fail: None }
    }

    pub fn cycle(role: Option<AgentRole>, texts: Vec<String>) -> Self {
        MockRule { role, contains: None, responses: Some(Responses::Many(texts)), fail: None }
    }

    pub fn when(mut self, substring: &str) -> Self {
        self.contains = Some(substring.into());
        self
    }

    pub fn failing(role: Option<AgentRole>, message: &str) -> Self {
        MockRule { role, contains: None, responses: None, fail: Some(message.into()) }
    }

    fn matches(&self, request: &CompletionRequest) -> bool {
        self.role.is_none_or(|r| r == request.role)
            && self.contains.as_deref().is_none_or(|s| request.user.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: String,
}

impl MockScript {
    pub fn always(text: &str) -> Self {
        MockScript { rules: Vec::new(), default_response: text.into() }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub role: AgentRole,
    pub system: String,
    pub user: String,
    pub response: Result<String, String>,
}

#[derive(Debug, Default)]
struct MockState {
    calls: Vec<MockCall>,
    served: BTreeMap<AgentRole, u64>,
}

pub struct MockProvider {
    script: MockScript,
    state: Rc<RefCell<MockState>>,
}

/// Read access to a [`MockProvider`]'s call log after it was moved into an `Llm`.
#[derive(Clone)]
pub struct MockLog(Rc<RefCell<MockState>>);

impl MockLog {
    pub fn calls(&self) -> Vec<MockCall> {
        self.0.borrow().calls.clone()
    }

    pub fn calls_for(&self, role: AgentRole) -> Vec<MockCall> {
        self.0.borrow().calls.iter().filter(|c| c.role == role).cloned().collect()
    }
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        MockProvider { script, state: Rc::default() }
    }

    pub fn log(&self) -> MockLog {
        MockLog(self.state.clone())
    }
}

impl Provider for MockProvider {
    fn send(&mut self, request: &CompletionRequest) -> Result<ProviderReply, LlmError> {
        let mut state = self.state.borrow_mut();
        let served = state.served.get(&request.role).copied().unwrap_or(0);
        let rule = self.script.rules.iter().find(|r| r.matches(request));
        let outcome = match rule {
            Some(MockRule { fail: Some(msg), .. }) => Err(msg.clone()),
            Some(MockRule { responses: Some(r), .. }) => {
                Ok(r.pick(served).unwrap_or(&self.script.default_response).into())
            }
            _ => Ok(self.script.default_response.clone()),
        };
        state.calls.push(MockCall {
            role: request.role,
            system: request.system.clone(),
            user: request.user.clone(),
            response: outcome.clone(),
        });
        match outcome {
            Ok(text) => {
                *state.served.entry(request.role).or_insert(0) += 1;
                Ok(ProviderReply { text, usage: None, latency_ms: 0, attempts: 1 })
            }
            Err(message) => Err(LlmError::Backend { message, attempts: 1 }),
        }
    }

    fn resume_from(&mut self, ledger: &UsageLedger) {
        let mut state = self.state.borrow_mut();
        for (role, usage) in ledger.iter() {
            state.served.insert(role, usage.calls);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AgentProfiles, Llm};
    use alloc::boxed::Box;
    use alloc::string::ToString;

    fn llm(script: MockScript) -> (Llm, MockLog) {
        let p = MockProvider::new(script);
        let log = p.log();
        (Llm::new(Box::new(p), AgentProfiles::default()), log)
    }

    #[test]
    fn first_matching_rule_wins() {
        let script = MockScript::always("default")
            .with_rule(MockRule::reply(Some(AgentRole::Generator), "```\nx=1\n```"))
            .with_rule(MockRule::reply(None, "any role"));
        let (mut llm, log) = llm(script);
        assert_eq!(llm.complete(AgentRole::Generator, "", "p").unwrap().text, "```\nx=1\n```");
        assert_eq!(llm.complete(AgentRole::Sampler, "", "p").unwrap().text, "any role");
        assert_eq!(log.calls().len(), 2);
    }

    #[test]
    fn substring_rules_and_default() {
        let script = MockScript::always("fallback").with_rule(MockRule::reply(None, "hit").when("needle"));
        let (mut llm, _) = llm(script);
        assert_eq!(llm.complete(AgentRole::Navigator, "", "hay needle hay").unwrap().text, "hit");
        assert_eq!(llm.complete(AgentRole::Navigator, "", "hay").unwrap().text, "fallback");
    }

    #[test]
    fn cycling_is_per_role_and_resumable() {
        let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let script = MockScript::default().with_rule(MockRule::cycle(Some(AgentRole::Generator), texts));
        let (mut llm, _) = llm(script.clone());
        let got: Vec<String> =
            (0..4).map(|_| llm.complete(AgentRole::Generator, "", "u").unwrap().text).collect();
        assert_eq!(got, ["a", "b", "c", "a"]);

        let mut ledger = UsageLedger::default();
        ledger.record(AgentRole::Generator, &crate::llm::Usage { prompt_tokens: 1, completion_tokens: 1, calls: 2 });
        let (mut resumed, _) = self::llm(script);
        resumed.resume_from(ledger);
        assert_eq!(resumed.complete(AgentRole::Generator, "", "u").unwrap().text, "c");
    }

    #[test]
    fn failing_rule_is_a_backend_error() {
        let (mut llm, log) = llm(MockScript::always("x").with_rule(MockRule::failing(Some(AgentRole::Sampler), "boom")));
        assert!(matches!(llm.complete(AgentRole::Sampler, "", "u"), Err(LlmError::Backend { .. })));
        assert_eq!(llm.usage_ledger().total().calls, 0);
        assert_eq!(log.calls().len(), 1);
    }

    #[test]
    fn identical_scripts_give_identical_ledgers() {
        let run = || {
            let (mut llm, _) = llm(MockScript::always("some reply text"));
            for role in AgentRole::ALL {
                llm.complete(role, "sys", "prompt body").unwrap();
            }
            llm.usage_ledger().clone()
        };
        assert_eq!(run(), run());
    }
}
