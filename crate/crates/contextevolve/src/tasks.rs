//! Task definitions and the built-in registry.

use contextevolve_core::scoring::{MetricDecl, MetricDirection, ScoreTransform, ScoringRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub description: String,
    /// Program and leading arguments; the evaluator appends
    /// `--task <name> --candidate <path>`. `None` means metadata only.
    #[serde(default)]
    pub runner: Option<Vec<String>>,
    pub metrics: Vec<MetricDecl>,
    /// `None` when no formula is known and the user must supply one.
    pub transform: Option<ScoreTransform>,
    pub score_direction: MetricDirection,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_extension")]
    pub candidate_extension: String,
}

fn default_timeout() -> u64 {
    30_000
}

fn default_extension() -> String {
    "py".into()
}

impl TaskSpec {
    pub fn scoring_rule(&self) -> Result<ScoringRule, String> {
        let transform = self
            .transform
            .ok_or_else(|| format!("task `{}` has no score transform; set task_spec.transform", self.name))?;
        let rule = ScoringRule { metrics: self.metrics.clone(), transform, score_direction: self.score_direction };
        rule.validate().map_err(|e| format!("task `{}`: {e}", self.name))?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err(format!("task `{}`: timeout_ms must be > 0", self.name));
        }
        self.scoring_rule().map(|_| ())
    }

    pub fn is_runnable(&self) -> bool {
        self.runner.is_some()
    }
}

/// Runner shipped alongside the desk-scale tasks.
pub const TOY_RUNNER: &[&str] = &["python3", "-m", "contextevolve_runner"];

fn spec(
    name: &str,
    description: &str,
    runner: bool,
    metrics: &[(&str, MetricDirection)],
    transform: Option<ScoreTransform>,
    score_direction: MetricDirection,
) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        description: description.into(),
        runner: runner.then(|| TOY_RUNNER.iter().map(|s| s.to_string()).collect()),
        metrics: metrics.iter().map(|(n, d)| MetricDecl::new(n, *d, 1.0)).collect(),
        transform,
        score_direction,
        timeout_ms: default_timeout(),
        candidate_extension: default_extension(),
    }
}

/// Built-in tasks: two runnable desk-scale tasks and five benchmark tasks
/// registered as metadata (no runner).
pub fn registry() -> Vec<TaskSpec> {
    use MetricDirection::{Maximize as Max, Minimize as Min};
    use ScoreTransform::{WeightedMean, WeightedSum};
    vec![
        spec(
            "toy-lb",
            "Assign the G expert groups of every layer to P packs of equal group count so that pack \
             loads are as even as possible. Implement `balanced_packing(weight, num_packs)` returning, \
             per layer, the pack index of every group. Scored on balance and on assignment speed.",
            true,
            &[("balance", Max), ("speed", Max)],
            Some(WeightedSum),
            Max,
        ),
        spec(
            "toy-ts",
            "Assign jobs with known durations to identical machines so that the last machine finishes \
             as early as possible. Implement `schedule(durations, machines)` returning the machine \
             index of every job. Scored on makespan and on validity of the assignment.",
            true,
            &[("makespan", Min), ("correctness", Max)],
            Some(WeightedSum),
            Max,
        ),
        spec(
            "ts",
            "Transaction scheduling: order database transactions to shorten total completion time \
             while keeping every schedule valid.",
            false,
            &[("makespan", Min), ("correctness", Max)],
            None,
            Max,
        ),
        spec(
            "sql",
            "SQL optimization: reorder table rows and fields so that key-value cache prefix hits rise \
             while the reordering itself stays fast.",
            false,
            &[("hit_rate", Max), ("latency", Min)],
            Some(WeightedSum),
            Max,
        ),
        spec(
            "lb",
            "Expert load balancing: place mixture-of-experts replicas on GPUs so that per-GPU load is \
             even and rebalancing runs quickly.",
            false,
            &[("balance", Max), ("speed", Max)],
            Some(WeightedSum),
            Max,
        ),
        spec(
            "sak",
            "Sparse attention kernel: choose attention masks that keep few active indices while \
             introducing little relative error; lower combined loss is better.",
            false,
            &[("density", Min), ("error", Min)],
            Some(WeightedMean),
            Min,
        ),
        spec(
            "mp",
            "Model placement: place models on GPUs so that the KV-cache pressure ratio stays low and \
             every placement succeeds.",
            false,
            &[("pressure", Max), ("success", Max)],
            Some(WeightedSum),
            Max,
        ),
    ]
}

pub fn lookup(name: &str) -> Option<TaskSpec> {
    registry().into_iter().find(|t| t.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_contents() {
        let names: Vec<String> = registry().into_iter().map(|t| t.name).collect();
        for n in ["toy-lb", "toy-ts", "ts", "sql", "lb", "sak", "mp"] {
            assert!(names.iter().any(|x| x == n), "{n} missing");
        }
        assert!(lookup("toy-lb").unwrap().is_runnable());
        assert!(!lookup("sak").unwrap().is_runnable());
    }

    #[test]
    fn ts_needs_user_transform() {
        assert!(lookup("ts").unwrap().validate().is_err());
        assert!(lookup("mp").unwrap().validate().is_ok());
    }
}
