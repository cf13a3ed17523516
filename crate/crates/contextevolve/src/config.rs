//! Run configuration: JSON file, dotted `--set` overrides, validation.

use std::path::{Path, PathBuf};

use contextevolve_core::agents::{GuidanceMode, SamplerMode, Strategy, SummaryMode};
use contextevolve_core::llm::AgentProfiles;
use contextevolve_core::mock::MockScript;
use contextevolve_core::selection::ParentSelectionPolicy;
use contextevolve_core::template::TemplateSet;
use contextevolve_core::trajectory::CategoryWeights;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tasks::{self, TaskSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config `{path}` is not valid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Scripted replies, from a JSON file or given inline.
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inline: Option<MockScript>,
    },
    /// Chat-completions HTTP endpoint configured through environment variables.
    Openai {
        #[serde(default = "default_request_timeout")]
        request_timeout_ms: u64,
    },
}

fn default_request_timeout() -> u64 {
    120_000
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { script: None, inline: Some(MockScript::default()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_summarizer: bool,
    pub disable_navigator: bool,
    pub disable_sampler: bool,
}

impl Ablation {
    pub fn any(&self) -> bool {
        self.disable_summarizer || self.disable_navigator || self.disable_sampler
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub summary_mode: SummaryMode,
    pub guidance_mode: GuidanceMode,
    pub sampler_mode: SamplerMode,
}

impl Perturbation {
    pub fn any(&self) -> bool {
        *self != Perturbation::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    /// Full task definition replacing the registry entry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_spec: Option<TaskSpec>,
    /// Runner command replacing the task's own.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runner: Option<Vec<String>>,
    pub strategy: Strategy,
    pub max_iterations: u32,
    pub token_budget: Option<u64>,
    pub seed: u64,
    pub seed_code: PathBuf,
    /// Output path; not part of the recorded configuration.
    #[serde(skip_serializing)]
    pub run_log: Option<PathBuf>,
    pub backend: BackendConfig,
    pub agents: AgentProfiles,
    pub selection: ParentSelectionPolicy,
    pub trajectory_length: [usize; 2],
    pub rollout_pool: usize,
    pub category_weights: CategoryWeights,
    pub trajectories_per_guidance: usize,
    pub exemplars: usize,
    pub excerpt_limit: usize,
    pub abstract_char_limit: usize,
    pub digest_limit: usize,
    pub raw_history_window: usize,
    pub window_budget_tokens: u64,
    pub ablation: Ablation,
    pub perturbation: Perturbation,
    pub evaluation_cache: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: String::new(),
            task_spec: None,
            runner: None,
            strategy: Strategy::Contextevolve,
            max_iterations: 10,
            token_budget: None,
            seed: 0,
            seed_code: PathBuf::new(),
            run_log: None,
            backend: BackendConfig::default(),
            agents: AgentProfiles::default(),
            selection: ParentSelectionPolicy::default(),
            trajectory_length: [1, 3],
            rollout_pool: 16,
            category_weights: CategoryWeights::default(),
            trajectories_per_guidance: 4,
            exemplars: 3,
            excerpt_limit: 600,
            abstract_char_limit: 1200,
            digest_limit: 16,
            raw_history_window: 3,
            window_budget_tokens: 8192,
            ablation: Ablation::default(),
            perturbation: Perturbation::default(),
            evaluation_cache: true,
            templates_dir: None,
        }
    }
}

/// Parses a `key=value` override; the value is JSON when it parses as such
/// and a plain string otherwise.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    Ok((key.split('.').map(String::from).collect(), value))
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{}` is not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Builds a config from a JSON value plus overrides. Relative paths are
    /// resolved against `base_dir`.
    pub fn from_value(mut value: Value, overrides: &[String], base_dir: &Path) -> Result<Self, ConfigError> {
        for spec in overrides {
            let (path, v) = parse_override(spec)?;
            apply_override(&mut value, &path, v)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.seed_code = resolve(base_dir, &cfg.seed_code);
        cfg.run_log = cfg.run_log.map(|p| resolve(base_dir, &p));
        cfg.templates_dir = cfg.templates_dir.map(|p| resolve(base_dir, &p));
        if let BackendConfig::Mock { script: Some(p), .. } = &mut cfg.backend {
            *p = resolve(base_dir, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_value(value, overrides, &base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1".into());
        }
        if self.seed_code.as_os_str().is_empty() {
            return bad("seed_code is required".into());
        }
        let [lo, hi] = self.trajectory_length;
        if lo < 1 || lo > hi {
            return bad(format!("trajectory_length [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        for (name, v) in [
            ("rollout_pool", self.rollout_pool),
            ("trajectories_per_guidance", self.trajectories_per_guidance),
            ("exemplars", self.exemplars),
            ("abstract_char_limit", self.abstract_char_limit),
            ("digest_limit", self.digest_limit),
            ("raw_history_window", self.raw_history_window),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.window_budget_tokens == 0 {
            return bad("window_budget_tokens must be >= 1".into());
        }
        self.selection.validate().map_err(|e| ConfigError::Invalid(format!("selection: {e}")))?;
        if self.strategy != Strategy::Contextevolve && (self.ablation.any() || self.perturbation.any()) {
            return bad(format!(
                "ablation and perturbation settings only apply to the contextevolve strategy, not {}",
                self.strategy.as_str()
            ));
        }
        if let BackendConfig::Mock { script, inline } = &self.backend {
            if script.is_some() == inline.is_some() {
                return bad("mock backend needs exactly one of `script` or `inline`".into());
            }
        }
        for (role, p) in [
            ("summarizer", &self.agents.summarizer),
            ("navigator", &self.agents.navigator),
            ("sampler", &self.agents.sampler),
            ("generator", &self.agents.generator),
        ] {
            if p.max_output_tokens == 0 {
                return bad(format!("agents.{role}.max_output_tokens must be >= 1"));
            }
        }
        self.task_spec()?;
        Ok(())
    }

    /// The effective task: the inline spec or the registry entry, with the
    /// runner override applied.
    pub fn task_spec(&self) -> Result<TaskSpec, ConfigError> {
        let mut spec = match &self.task_spec {
            Some(s) => s.clone(),
            None => tasks::lookup(&self.task).ok_or_else(|| {
                ConfigError::Invalid(format!("unknown task `{}` (see `contextevolve tasks`)", self.task))
            })?,
        };
        if !self.task.is_empty() && spec.name != self.task {
            return Err(ConfigError::Invalid(format!(
                "task `{}` does not match task_spec name `{}`",
                self.task, spec.name
            )));
        }
        if let Some(r) = &self.runner {
            spec.runner = Some(r.clone());
        }
        spec.validate().map_err(ConfigError::Invalid)?;
        Ok(spec)
    }

    pub fn mock_script(&self) -> Result<Option<MockScript>, ConfigError> {
        match &self.backend {
            BackendConfig::Mock { inline: Some(s), .. } => Ok(Some(s.clone())),
            BackendConfig::Mock { script: Some(p), .. } => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.clone(), source })?;
                serde_json::from_str(&text)
                    .map(Some)
                    .map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() })
            }
            _ => Ok(None),
        }
    }

    /// Builtin templates with per-kind overrides from `templates_dir/<kind>.txt`.
    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        let dir = self.templates_dir.clone();
        let mut read_err = None;
        let set = TemplateSet::load(|kind| {
            let dir = dir.as_ref()?;
            let path = dir.join(format!("{kind}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(t) => Some(t),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => {
                    read_err.get_or_insert(ConfigError::Read { path, source: e });
                    None
                }
            }
        })
        .map_err(|e| ConfigError::Invalid(format!("templates: {e}")))?;
        match read_err {
            Some(e) => Err(e),
            None => Ok(set),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({"task": "toy-lb", "seed_code": "seed.py", "backend": {"kind": "mock", "inline": {}}})
    }

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::from_value(base(), &[], Path::new("/cfg")).unwrap();
        assert_eq!(cfg.seed_code, PathBuf::from("/cfg/seed.py"));
        assert_eq!(cfg.trajectory_length, [1, 3]);
        assert_eq!(cfg.raw_history_window, 3);
        assert_eq!(cfg.exemplars, 3);
        assert_eq!(cfg.selection, ParentSelectionPolicy::EpsilonGreedy { epsilon: 0.2 });
    }

    #[test]
    fn dotted_overrides() {
        let cfg = RunConfig::from_value(
            base(),
            &["max_iterations=2".into(), "ablation.disable_navigator=true".into(), "agents.generator.model=big".into()],
            Path::new("/"),
        )
        .unwrap();
        assert_eq!(cfg.max_iterations, 2);
        assert!(cfg.ablation.disable_navigator);
        assert_eq!(cfg.agents.generator.model, "big");
        assert!(matches!(parse_override("novalue"), Err(ConfigError::Override(_))));
        assert!(matches!(parse_override("a..b=1"), Err(ConfigError::Override(_))));
    }

    #[test]
    fn rejections() {
        let cases: &[&[&str]] = &[
            &["max_iterations=0"],
            &["task=nope"],
            &["task=ts"],
            &["strategy=raw_history", "ablation.disable_sampler=true"],
            &["strategy=one_shot", "perturbation.guidance_mode=prescriptive"],
            &["trajectory_length=[3,1]"],
            &["selection={\"kind\":\"epsilon_greedy\",\"epsilon\":1.5}"],
            &["category_weights=[0,0,0]"],
            &["unknown_key=1"],
        ];
        for overrides in cases {
            let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
            assert!(RunConfig::from_value(base(), &o, Path::new("/")).is_err(), "{overrides:?}");
        }
    }

    #[test]
    fn ts_accepts_user_transform() {
        let spec = tasks::lookup("ts").unwrap();
        let mut v = serde_json::to_value(&spec).unwrap();
        v["transform"] = json!("weighted_sum");
        let mut cfg = base();
        cfg["task"] = json!("ts");
        cfg["task_spec"] = v;
        assert!(RunConfig::from_value(cfg, &[], Path::new("/")).is_ok());
    }

    #[test]
    fn run_log_not_recorded() {
        let mut v = base();
        v["run_log"] = json!("out.jsonl");
        let cfg = RunConfig::from_value(v, &[], Path::new("/x")).unwrap();
        assert_eq!(cfg.run_log, Some(PathBuf::from("/x/out.jsonl")));
        assert!(cfg.to_value().get("run_log").is_none());
    }
}
