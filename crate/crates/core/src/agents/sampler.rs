use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{AgentError, Agents, Guidance};
use crate::buffer::DigestRow;
use crate::llm::AgentRole;
use crate::record::RecordId;
use crate::text::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Semantic,
    TopScoreOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub record_ids: Vec<RecordId>,
    pub rationale: Option<String>,
    pub mode: SamplerMode,
    /// True when the semantic answer was unusable and top-score selection was substituted.
    pub fallback: bool,
}

/// Best `k` rows by combined score, ties to the lowest id. No model call.
pub fn top_score_only(digest: &[DigestRow], k: usize) -> ExemplarSet {
    let mut rows: Vec<&DigestRow> = digest.iter().collect();
    rows.sort_by(|a, b| b.combined_score.total_cmp(&a.combined_score).then(a.id.cmp(&b.id)));
    ExemplarSet {
        record_ids: rows.iter().take(k).map(|r| r.id).collect(),
        rationale: None,
        mode: SamplerMode::TopScoreOnly,
        fallback: false,
    }
}

pub(crate) fn render_digest(digest: &[DigestRow]) -> String {
    let mut out = String::new();
    for r in digest {
        let _ = writeln!(out, "{} | {} | {} | {}", r.id, fmt_num(r.combined_score), r.status.as_str(), r.abstract_text);
    }
    out.trim_end().into()
}

enum Parsed {
    Ids(Vec<u64>),
    NoIds,
}

/// Ids from the last `ids:` line of the reply, in order, without repeats.
fn parse_ids(reply: &str) -> (Parsed, Option<String>) {
    let line_idx = reply.lines().enumerate().filter(|(_, l)| l.to_ascii_lowercase().contains("ids:")).last();
    let Some((idx, line)) = line_idx else {
        return (Parsed::NoIds, None);
    };
    let lower = line.to_ascii_lowercase();
    let start = lower.rfind("ids:").expect("line contains marker") + 4;
    let mut ids = Vec::new();
    for tok in line[start..].split(|c: char| c == ',' || c.is_whitespace()) {
        let tok = tok.trim().trim_start_matches('#').trim_end_matches('.');
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<u64>() {
            Ok(id) if !ids.contains(&id) => ids.push(id),
            Ok(_) => {}
            Err(_) => return (Parsed::NoIds, None),
        }
    }
    let rationale: Vec<&str> =
        reply.lines().enumerate().filter(|(i, _)| *i != idx).map(|(_, l)| l).collect();
    let rationale = rationale.join("\n").trim().to_string();
    let parsed = if ids.is_empty() { Parsed::NoIds } else { Parsed::Ids(ids) };
    (parsed, (!rationale.is_empty()).then_some(rationale))
}

impl Agents<'_> {
    /// Picks up to `k` exemplars from the digest.
    ///
    /// The model sees only the digest, the parent abstract and the guidance.
    /// An answer naming unknown ids (or none) is retried once with a notice;
    /// a second bad answer falls back to [`top_score_only`], flagged.
    pub fn curate_exemplars(
        &mut self,
        digest: &[DigestRow],
        parent_abstract: &str,
        guidance: Option<&Guidance>,
        k: usize,
        mode: SamplerMode,
    ) -> Result<ExemplarSet, AgentError> {
        if k == 0 {
            return Err(AgentError::InvalidInput("k must be >= 1"));
        }
        if digest.is_empty() {
            return Err(AgentError::InvalidInput("digest is empty"));
        }
        if mode == SamplerMode::TopScoreOnly {
            return Ok(top_score_only(digest, k));
        }
        let known: BTreeSet<u64> = digest.iter().map(|r| r.id.0).collect();
        let k_text = format!("{k}");
        let guidance_text = guidance.map(|g| g.text.as_str()).unwrap_or("(none)");
        let base = self.templates.render(
            "sampler.user",
            &[
                ("parent_abstract", parent_abstract),
                ("guidance", guidance_text),
                ("digest", &render_digest(digest)),
                ("k", &k_text),
            ],
        )?;
        let system = self.templates.render("sampler.system", &[])?;
        let mut user = base.clone();
        for attempt in 0..2 {
            let reply = self.llm.complete(AgentRole::Sampler, &system, &user)?;
            let (parsed, rationale) = parse_ids(&reply.text);
            let invalid: Vec<String> = match parsed {
                Parsed::Ids(ids) => {
                    let bad: Vec<String> = ids.iter().filter(|i| !known.contains(i)).map(|i| format!("{i}")).collect();
                    if bad.is_empty() {
                        return Ok(ExemplarSet {
                            record_ids: ids.into_iter().take(k).map(RecordId).collect(),
                            rationale,
                            mode,
                            fallback: false,
                        });
                    }
                    bad
                }
                Parsed::NoIds => alloc::vec!["(no ids found)".to_string()],
            };
            if attempt == 0 {
                let notice = self.templates.render("sampler.retry", &[("invalid_ids", &invalid.join(", "))])?;
                user = format!("{base}\n\n{notice}");
            }
        }
        let mut fallback = top_score_only(digest, k);
        fallback.fallback = true;
        Ok(fallback)
    }
}
