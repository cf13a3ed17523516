//! Allocation-only core of the contextevolve optimizer.
//!
//! Everything here is deterministic given its inputs and a seed: the evolve
//! buffer and its trajectory machinery, multi-metric scoring, the heuristic
//! token counter, prompt templates, and the four LLM-facing agents written
//! against the [`llm::Provider`] abstraction. Process spawning, HTTP, files
//! and clocks live in the `contextevolve` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agents;
pub mod buffer;
pub mod llm;
pub mod mock;
pub mod record;
pub mod rng;
pub mod scoring;
pub mod selection;
pub mod template;
pub mod text;
pub mod tokens;
pub mod trajectory;

pub use buffer::{BufferError, DigestRow, EvolveBuffer};
pub use llm::{AgentRole, CompletionRequest, CompletionResponse, Llm, LlmError, Provider, UsageLedger};
pub use record::{code_hash, EvolveRecord, NewRecord, RecordId, RecordStatus};
pub use scoring::{combine, MetricDecl, MetricDirection, ScoreTransform, ScoringError, ScoringRule};
pub use selection::ParentSelectionPolicy;
pub use tokens::count_tokens;
pub use trajectory::{
    classify_step, sample_by_category, CategoryWeights, StepDirection, Trajectory, TrajectoryCategory,
    TrajectoryError, TrajectoryStep,
};
