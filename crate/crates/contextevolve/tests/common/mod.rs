//! Shared fixtures: a shell stub runner and mock-driven run configs.
#![allow(dead_code)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use contextevolve::config::RunConfig;
use contextevolve::orchestrator::{run_with, RunEnv, RunOptions, RunResult};
use contextevolve::evaluator::SubprocessEvaluator;
use contextevolve_core::llm::AgentRole;
use contextevolve_core::mock::{MockLog, MockProvider, MockRule, MockScript};
use serde_json::{json, Value};
use tempfile::TempDir;

/// Stub runner speaking the evaluator protocol. It looks at the candidate:
/// `# raise <msg>` reports a failure, `# sleep <s>` sleeps first,
/// `# garbage` prints non-JSON, `# exit <n>` exits nonzero, `# noise`
/// prints an extra line, and `# metrics {...}` is echoed as the metrics.
pub const STUB_RUNNER: &str = r#"#!/bin/sh
task=""; cand=""
while [ $# -gt 0 ]; do
  case "$1" in
    --task) task="$2"; shift 2 ;;
    --candidate) cand="$2"; shift 2 ;;
    *) echo "bad argument $1" >&2; exit 64 ;;
  esac
done
[ -n "$task" ] && [ -f "$cand" ] || { echo "usage" >&2; exit 64; }
if [ -n "$STUB_SECRET" ]; then echo '{"status":"failed","error":"environment leaked"}'; exit 0; fi
s=$(sed -n 's/^# sleep //p' "$cand" | head -n 1)
[ -n "$s" ] && sleep "$s"
if grep -q '^# garbage' "$cand"; then echo "this is not json"; exit 0; fi
e=$(sed -n 's/^# exit //p' "$cand" | head -n 1)
[ -n "$e" ] && { echo "dying" >&2; exit "$e"; }
grep -q '^# noise' "$cand" && echo "debug output"
r=$(sed -n 's/^# raise //p' "$cand" | head -n 1)
if [ -n "$r" ]; then echo "Traceback (most recent call last)" >&2; printf '{"status":"failed","error":"%s"}\n' "$r"; exit 0; fi
m=$(sed -n 's/^# metrics //p' "$cand" | head -n 1)
if [ -z "$m" ]; then echo '{"status":"failed","error":"no metrics line"}'; exit 0; fi
printf '{"status":"ok","metrics":%s}\n' "$m"
"#;

pub struct Fixture {
    pub dir: TempDir,
    pub runner: PathBuf,
    pub seed: PathBuf,
}

pub fn candidate(balance: f64, speed: f64, body: &str) -> String {
    format!("# metrics {{\"balance\":{balance},\"speed\":{speed}}}\ndef balanced_packing(weight, num_packs):\n{body}\n")
}

pub fn fenced(code: &str) -> String {
    format!("Here is the improved program.\n```python\n{code}```\n")
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_seed(&candidate(0.25, 0.2, "    return [list(range(len(weight[0])))]"))
    }

    pub fn with_seed(seed_code: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let runner = dir.path().join("runner.sh");
        std::fs::write(&runner, STUB_RUNNER).unwrap();
        std::fs::set_permissions(&runner, std::fs::Permissions::from_mode(0o755)).unwrap();
        let seed = dir.path().join("seed.py");
        std::fs::write(&seed, seed_code).unwrap();
        Fixture { dir, runner, seed }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Config JSON for toy-lb with the stub runner and an inline script.
    pub fn config_value(&self, script: &MockScript) -> Value {
        json!({
            "task": "toy-lb",
            "runner": [self.runner.to_str().unwrap()],
            "seed_code": self.seed.to_str().unwrap(),
            "max_iterations": 3,
            "seed": 7,
            "backend": {"kind": "mock", "inline": script},
        })
    }

    pub fn config(&self, script: &MockScript, overrides: &[&str]) -> RunConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::from_value(self.config_value(script), &o, self.dir.path()).unwrap()
    }

    pub fn write_config(&self, name: &str, script: &MockScript, overrides: &[(&str, Value)]) -> PathBuf {
        let mut v = self.config_value(script);
        for (k, val) in overrides {
            v[*k] = val.clone();
        }
        let p = self.path(name);
        std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        p
    }
}

/// Generator replies that cycle through improving, failing and declining programs.
pub fn generator_replies() -> Vec<String> {
    vec![
        fenced(&candidate(0.31, 0.22, "    return sorted_pack(weight, num_packs)")),
        fenced(&candidate(0.28, 0.30, "    return greedy_pack(weight, num_packs)")),
        fenced("# raise ZeroDivisionError: division by zero\ndef balanced_packing(weight, num_packs):\n    return 1 / 0\n"),
        fenced(&candidate(0.34, 0.35, "    return snake_pack(weight, num_packs)")),
        fenced(&candidate(0.20, 0.10, "    return naive_pack(weight, num_packs)")),
        fenced(&candidate(0.36, 0.40, "    return refined_pack(weight, num_packs)")),
    ]
}

pub fn summarizer_replies() -> Vec<String> {
    (0..7).map(|i| format!("Variant {i}: packs groups by descending weight, keeps round-robin fill.")).collect()
}

/// A script exercising every agent role.
pub fn standard_script() -> MockScript {
    MockScript::always("no idea")
        .with_rule(MockRule::cycle(Some(AgentRole::Summarizer), summarizer_replies()))
        .with_rule(MockRule::reply(Some(AgentRole::Navigator), "Prefer moves that balance the heaviest packs first."))
        .with_rule(MockRule::cycle(
            Some(AgentRole::Sampler),
            vec!["Relevant and diverse.\nids: 0".into(), "ids: 1, 0".into(), "ids: 2".into()],
        ))
        .with_rule(MockRule::cycle(Some(AgentRole::Generator), generator_replies()))
}

/// Runs with a mock provider whose call log is returned alongside the result.
pub fn run_mock(cfg: &RunConfig, script: MockScript) -> (RunResult, MockLog) {
    let provider = MockProvider::new(script);
    let log = provider.log();
    let env = RunEnv { provider: Box::new(provider), oracle: Box::new(SubprocessEvaluator::new(cfg.evaluation_cache)) };
    let result = run_with(cfg, &[], env, RunOptions::default()).unwrap();
    (result, log)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

pub fn normalized(path: &Path) -> String {
    contextevolve::runlog::normalized_text(&read(path)).unwrap()
}
