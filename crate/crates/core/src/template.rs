//! Prompt templates with `${placeholder}` substitution.
//!
//! Every template kind declares the placeholders the engine supplies. A
//! template that mentions anything else is rejected when the set is loaded,
//! not at first use.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::record::fnv1a;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{template}` uses unknown placeholder `${{{name}}}`")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("no value supplied for `${{{0}}}`")]
    MissingValue(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(start) = rest.find("${") {
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after.find('}').ok_or_else(|| TemplateError::Unterminated { template: name.to_string() })?;
            let slot = &after[..end];
            if !allowed.contains(&slot) {
                return Err(TemplateError::UnknownPlaceholder { template: name.to_string(), name: slot.to_string() });
            }
            segments.push(Segment::Slot(slot.to_string()));
            rest = &after[end + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        Ok(Template { source: source.to_string(), segments })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len());
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::MissingValue(name.clone()))?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

/// Template file names and the placeholders each may use.
pub const TEMPLATE_KINDS: &[(&str, &[&str])] = &[
    ("summarizer.system", &[]),
    ("summarizer.user", &["parent_abstract", "child_code", "focus", "char_limit"]),
    ("summary_focus.novel_and_preserved", &[]),
    ("summary_focus.novel_only", &[]),
    ("navigator.system", &[]),
    ("navigator.user", &["samples", "style"]),
    ("guidance.directional", &[]),
    ("guidance.prescriptive", &[]),
    ("sampler.system", &[]),
    ("sampler.user", &["parent_abstract", "guidance", "digest", "k"]),
    ("sampler.retry", &["invalid_ids"]),
    ("generator.system", &[]),
    ("generator.reprompt", &[]),
];

fn builtin(name: &str) -> &'static str {
    match name {
        "summarizer.system" => include_str!("../templates/summarizer.system.txt"),
        "summarizer.user" => include_str!("../templates/summarizer.user.txt"),
        "summary_focus.novel_and_preserved" => include_str!("../templates/summary_focus.novel_and_preserved.txt"),
        "summary_focus.novel_only" => include_str!("../templates/summary_focus.novel_only.txt"),
        "navigator.system" => include_str!("../templates/navigator.system.txt"),
        "navigator.user" => include_str!("../templates/navigator.user.txt"),
        "guidance.directional" => include_str!("../templates/guidance.directional.txt"),
        "guidance.prescriptive" => include_str!("../templates/guidance.prescriptive.txt"),
        "sampler.system" => include_str!("../templates/sampler.system.txt"),
        "sampler.user" => include_str!("../templates/sampler.user.txt"),
        "sampler.retry" => include_str!("../templates/sampler.retry.txt"),
        "generator.system" => include_str!("../templates/generator.system.txt"),
        "generator.reprompt" => include_str!("../templates/generator.reprompt.txt"),
        _ => unreachable!("unknown template kind {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<(&'static str, Template)>,
}

impl TemplateSet {
    /// The templates compiled into the crate.
    pub fn builtin() -> Self {
        Self::load(|_| None).expect("builtin templates are valid")
    }

    /// Loads every kind, taking `override_for(name)` when it returns text and
    /// the builtin otherwise.
    pub fn load<F>(mut override_for: F) -> Result<Self, TemplateError>
    where
        F: FnMut(&str) -> Option<String>,
    {
        let mut templates = Vec::with_capacity(TEMPLATE_KINDS.len());
        for (name, allowed) in TEMPLATE_KINDS {
            let text = override_for(name).unwrap_or_else(|| builtin(name).to_string());
            templates.push((*name, Template::parse(name, &text, allowed)?));
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, name: &str) -> &Template {
        &self.templates.iter().find(|(n, _)| *n == name).expect("known template kind").1
    }

    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(name).render(values)
    }

    /// Content hash over every template, recorded in run logs.
    pub fn version_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in &self.templates {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(t.source().as_bytes());
            bytes.push(0);
        }
        format!("{:016x}", fnv1a(&bytes))
    }
}
