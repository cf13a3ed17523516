use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use super::{AgentError, Agents};
use crate::llm::AgentRole;
use crate::text::{strip_code_fences, truncate_chars};

/// Stands in for the parent abstract when summarizing a seed program.
pub const SEED_MARKER: &str = "(seed program, no parent)";

/// Code characters kept by [`fallback_abstract`].
pub const FALLBACK_CODE_CHARS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    #[default]
    NovelAndPreserved,
    NovelOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticAbstract {
    pub text: String,
    pub char_limit: usize,
    pub covers_novel: bool,
    pub covers_inherited: bool,
}

/// Deterministic abstract: the head of the code plus the metric names.
pub fn fallback_abstract(code: &str, metric_names: &[&str], char_limit: usize) -> SemanticAbstract {
    let head = truncate_chars(code, FALLBACK_CODE_CHARS).trim_end();
    let mut text = if metric_names.is_empty() {
        head.to_string()
    } else {
        format!("{head}\nmetrics: {}", metric_names.join(", "))
    };
    if text.trim().is_empty() {
        text = "(empty program)".to_string();
    }
    let text = truncate_chars(&text, char_limit.max(1)).to_string();
    SemanticAbstract { text, char_limit, covers_novel: false, covers_inherited: false }
}

impl Agents<'_> {
    /// Abstract of `child_code` relative to `parent` (`None` for a seed).
    ///
    /// An empty or over-long reply is retried once; after that the caller
    /// gets [`AgentError::AbstractUnavailable`] carrying the fallback.
    pub fn summarize(
        &mut self,
        parent: Option<&str>,
        child_code: &str,
        metric_names: &[&str],
        mode: SummaryMode,
        char_limit: usize,
    ) -> Result<SemanticAbstract, AgentError> {
        if child_code.is_empty() {
            return Err(AgentError::InvalidInput("child code is empty"));
        }
        let focus = match mode {
            SummaryMode::NovelAndPreserved => self.templates.render("summary_focus.novel_and_preserved", &[])?,
            SummaryMode::NovelOnly => self.templates.render("summary_focus.novel_only", &[])?,
        };
        let parent_text = match parent {
            Some(p) if !p.trim().is_empty() => p,
            _ => SEED_MARKER,
        };
        let limit = format!("{char_limit}");
        let user = self.templates.render(
            "summarizer.user",
            &[("parent_abstract", parent_text), ("child_code", child_code), ("focus", &focus), ("char_limit", &limit)],
        )?;
        let system = self.templates.render("summarizer.system", &[])?;

        let mut reason = String::new();
        for _ in 0..2 {
            let reply = self.llm.complete(AgentRole::Summarizer, &system, &user)?;
            let text = strip_code_fences(&reply.text);
            if text.is_empty() {
                reason = "empty response".into();
            } else if text.chars().count() > char_limit {
                reason = format!("response exceeds {char_limit} characters");
            } else {
                return Ok(SemanticAbstract {
                    text,
                    char_limit,
                    covers_novel: true,
                    covers_inherited: mode == SummaryMode::NovelAndPreserved,
                });
            }
        }
        Err(AgentError::AbstractUnavailable { reason, fallback: fallback_abstract(child_code, metric_names, char_limit) })
    }
}
