//! Orchestration, evaluation, wire client, run logs and reports.

pub mod config;
pub mod evaluator;
pub mod numfmt;
pub mod orchestrator;
pub mod runlog;
pub mod tasks;
pub mod wire;
pub mod report;
pub mod cli;
