//! The four LLM-facing roles: summarizer, navigator, sampler and generator,
//! plus context composition for the generator.
//!
//! Each agent renders a prompt from the template set, makes a single-turn
//! call through [`Llm`], and parses the reply. Recoverable failures come back
//! as errors that carry (or let the caller build) a deterministic fallback.

mod compose;
mod generator;
mod navigator;
mod sampler;
mod summarizer;

use alloc::string::String;

use thiserror::Error;

use crate::llm::{Llm, LlmError};
use crate::template::{TemplateError, TemplateSet};

pub use compose::{compose_context, ComposeParams, ComposedContext, ContextInputs, ContextSection, Strategy};
pub use generator::GeneratedCode;
pub use navigator::{Guidance, GuidanceMode, StepTriple, TrajectorySample};
pub use sampler::{top_score_only, ExemplarSet, SamplerMode};
pub use summarizer::{fallback_abstract, SemanticAbstract, SummaryMode, FALLBACK_CODE_CHARS, SEED_MARKER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("abstract unavailable ({reason}); using fallback")]
    AbstractUnavailable { reason: String, fallback: SemanticAbstract },
    #[error("guidance unavailable: {0}")]
    GuidanceUnavailable(String),
    #[error("no trajectory samples given")]
    EmptySamples,
    #[error("no code block in generator response")]
    ParseFailed { response: String },
    #[error("mandatory context sections need {needed} tokens, window budget is {budget}")]
    WindowOverflow { needed: u64, budget: u64 },
    #[error("invalid agent input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl AgentError {
    /// Budget exhaustion must stop the run rather than trigger a fallback.
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, AgentError::Llm(LlmError::BudgetExhausted { .. }))
    }
}

/// Borrowed handles every agent call needs.
pub struct Agents<'a> {
    pub llm: &'a mut Llm,
    pub templates: &'a TemplateSet,
}

impl<'a> Agents<'a> {
    pub fn new(llm: &'a mut Llm, templates: &'a TemplateSet) -> Self {
        Agents { llm, templates }
    }
}
