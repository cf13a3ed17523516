use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{AgentError, Guidance};
use crate::record::EvolveRecord;
use crate::text::{fmt_num, truncate_chars};
use crate::tokens::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Contextevolve,
    RawHistory,
    OneShot,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Contextevolve => "contextevolve",
            Strategy::RawHistory => "raw_history",
            Strategy::OneShot => "one_shot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeParams {
    /// Maximum characters of raw code shown per exemplar; 0 shows none.
    pub excerpt_limit: usize,
    pub window_budget: u64,
}

impl Default for ComposeParams {
    fn default() -> Self {
        ComposeParams { excerpt_limit: 600, window_budget: 8192 }
    }
}

pub enum ContextInputs<'a> {
    Contextevolve { parent: &'a EvolveRecord, guidance: Option<&'a Guidance>, exemplars: &'a [&'a EvolveRecord] },
    /// `history` is oldest first.
    RawHistory { parent: &'a EvolveRecord, history: &'a [&'a EvolveRecord] },
    OneShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSection {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedContext {
    pub sections: Vec<ContextSection>,
    pub strategy: Strategy,
    pub rendered: String,
    pub token_count: u64,
}

fn section(label: &str, text: String) -> ContextSection {
    ContextSection { label: label.into(), text }
}

fn render(sections: &[ContextSection]) -> String {
    let parts: Vec<String> =
        sections.iter().filter(|s| !s.text.is_empty()).map(|s| format!("## {}\n{}", s.label, s.text)).collect();
    parts.join("\n\n")
}

fn fenced(code: &str) -> String {
    format!("```\n{code}\n```")
}

fn record_header(r: &EvolveRecord) -> String {
    format!("[#{}] score {} ({})", r.id, fmt_num(r.combined_score), r.status.as_str())
}

fn render_exemplars(exemplars: &[&EvolveRecord], excerpt_limit: usize) -> String {
    let mut out = String::new();
    for r in exemplars {
        let _ = writeln!(out, "{}", record_header(r));
        let _ = writeln!(out, "{}", r.abstract_text);
        if excerpt_limit > 0 {
            let _ = writeln!(out, "{}", fenced(truncate_chars(&r.code, excerpt_limit)));
        }
        out.push('\n');
    }
    out.trim_end().into()
}

fn render_history(history: &[&EvolveRecord]) -> String {
    let parts: Vec<String> = history.iter().map(|r| format!("{}\n{}", record_header(r), fenced(&r.code))).collect();
    parts.join("\n\n")
}

fn finish(sections: Vec<ContextSection>, strategy: Strategy) -> ComposedContext {
    let rendered = render(&sections);
    let token_count = count_tokens(&rendered);
    ComposedContext { sections, strategy, rendered, token_count }
}

/// Assembles the generator prompt for one iteration.
///
/// Optional material is dropped until the prompt fits the window budget:
/// the oldest raw programs for `RawHistory`; trailing exemplars, then the
/// guidance, then the parent abstract for `Contextevolve`.
pub fn compose_context(
    task_description: &str,
    inputs: ContextInputs<'_>,
    params: &ComposeParams,
) -> Result<ComposedContext, AgentError> {
    let task = section("Task", task_description.into());
    match inputs {
        ContextInputs::OneShot => Ok(finish(alloc::vec![task], Strategy::OneShot)),
        ContextInputs::RawHistory { parent, history } => {
            let mandatory = alloc::vec![task.clone(), section("Current program", fenced(&parent.code))];
            check_mandatory(&mandatory, params)?;
            let mut start = 0;
            loop {
                let mut sections = mandatory.clone();
                sections.push(section("Previous programs", render_history(&history[start..])));
                let ctx = finish(sections, Strategy::RawHistory);
                if ctx.token_count <= params.window_budget || start >= history.len() {
                    return Ok(ctx);
                }
                start += 1;
            }
        }
        ContextInputs::Contextevolve { parent, guidance, exemplars } => {
            let mandatory = [task.clone(), section("Current program", fenced(&parent.code))];
            check_mandatory(&mandatory, params)?;
            let mut n_exemplars = exemplars.len();
            let mut with_guidance = true;
            let mut with_abstract = true;
            loop {
                let sections = alloc::vec![
                    task.clone(),
                    section("Current program summary", if with_abstract { parent.abstract_text.clone() } else { String::new() }),
                    mandatory[1].clone(),
                    section(
                        "Optimization guidance",
                        match guidance {
                            Some(g) if with_guidance => g.text.clone(),
                            _ => String::new(),
                        },
                    ),
                    section("Reference programs", render_exemplars(&exemplars[..n_exemplars], params.excerpt_limit)),
                ];
                let ctx = finish(sections, Strategy::Contextevolve);
                if ctx.token_count <= params.window_budget {
                    return Ok(ctx);
                }
                if n_exemplars > 0 {
                    n_exemplars -= 1;
                } else if with_guidance {
                    with_guidance = false;
                } else if with_abstract {
                    with_abstract = false;
                } else {
                    return Ok(ctx);
                }
            }
        }
    }
}

fn check_mandatory(sections: &[ContextSection], params: &ComposeParams) -> Result<(), AgentError> {
    let needed = count_tokens(&render(sections));
    if needed > params.window_budget {
        return Err(AgentError::WindowOverflow { needed, budget: params.window_budget });
    }
    Ok(())
}
