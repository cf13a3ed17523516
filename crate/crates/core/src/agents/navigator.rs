use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{AgentError, Agents};
use crate::llm::AgentRole;
use crate::record::RecordId;
use crate::text::{fmt_num, strip_code_fences};
use crate::trajectory::TrajectoryCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    #[default]
    Directional,
    Prescriptive,
}

/// One lineage edge as seen by the navigator.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTriple {
    pub parent_abstract: String,
    pub child_abstract: String,
    /// `parent - child` combined score.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub fingerprint: Vec<RecordId>,
    pub category: TrajectoryCategory,
    pub steps: Vec<StepTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub text: String,
    pub source_trajectories: Vec<Vec<RecordId>>,
    pub specificity_mode: GuidanceMode,
}

fn render_samples(samples: &[TrajectorySample]) -> String {
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        let ids: Vec<String> = s.fingerprint.iter().map(|id| format!("{id}")).collect();
        let _ = writeln!(out, "Trajectory {} [{}] ({}):", i + 1, ids.join(" -> "), s.category.as_str());
        for (j, t) in s.steps.iter().enumerate() {
            let _ = writeln!(out, "  step {}: delta {}", j + 1, fmt_num(t.delta));
            let _ = writeln!(out, "    parent: {}", t.parent_abstract);
            let _ = writeln!(out, "    child: {}", t.child_abstract);
        }
    }
    out.trim_end().into()
}

impl Agents<'_> {
    /// Distills directional advice from sampled trajectories.
    pub fn distill_guidance(&mut self, samples: &[TrajectorySample], mode: GuidanceMode) -> Result<Guidance, AgentError> {
        if samples.is_empty() || samples.iter().any(|s| s.steps.is_empty()) {
            return Err(AgentError::EmptySamples);
        }
        let style = match mode {
            GuidanceMode::Directional => self.templates.render("guidance.directional", &[])?,
            GuidanceMode::Prescriptive => self.templates.render("guidance.prescriptive", &[])?,
        };
        let rendered = render_samples(samples);
        let user = self.templates.render("navigator.user", &[("samples", &rendered), ("style", &style)])?;
        let system = self.templates.render("navigator.system", &[])?;
        for _ in 0..2 {
            let reply = self.llm.complete(AgentRole::Navigator, &system, &user)?;
            let text = strip_code_fences(&reply.text);
            if !text.is_empty() {
                return Ok(Guidance {
                    text,
                    source_trajectories: samples.iter().map(|s| s.fingerprint.clone()).collect(),
                    specificity_mode: mode,
                });
            }
        }
        Err(AgentError::GuidanceUnavailable("empty response".into()))
    }
}
