use alloc::format;
use alloc::string::String;

use super::{AgentError, Agents, ComposedContext};
use crate::llm::AgentRole;
use crate::text::extract_code;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCode {
    pub code: String,
    /// 1, or 2 when the reprompt was needed.
    pub attempts: u32,
}

impl Agents<'_> {
    /// Samples a candidate program for `context`. A reply without usable code
    /// is followed by one reprompt asking for a single code block.
    pub fn generate(&mut self, context: &ComposedContext) -> Result<GeneratedCode, AgentError> {
        let system = self.templates.render("generator.system", &[])?;
        let reply = self.llm.complete(AgentRole::Generator, &system, &context.rendered)?;
        if let Some(code) = extract_code(&reply.text) {
            return Ok(GeneratedCode { code, attempts: 1 });
        }
        let reprompt = self.templates.render("generator.reprompt", &[])?;
        let user = format!("{}\n\n{}", context.rendered, reprompt.trim_end());
        let reply = self.llm.complete(AgentRole::Generator, &system, &user)?;
        extract_code(&reply.text)
            .map(|code| GeneratedCode { code, attempts: 2 })
            .ok_or(AgentError::ParseFailed { response: reply.text })
    }
}
