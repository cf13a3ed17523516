//! Subprocess evaluation of candidate programs.
//!
//! Runner protocol: the engine executes
//! `<runner...> --task <name> --candidate <path>` in a fresh temporary
//! directory with a scrubbed environment. The runner prints exactly one JSON
//! line, either `{"status":"ok","metrics":{...}}` or
//! `{"status":"failed","error":"..."}`, and exits 0. Anything else counts as
//! a failed candidate; exceeding the task timeout kills the whole process
//! group and counts as a timeout.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use contextevolve_core::record::{code_hash, RecordStatus};
use contextevolve_core::scoring::combine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tasks::TaskSpec;

/// Bytes of runner stderr kept for diagnostics.
pub const STDERR_EXCERPT_BYTES: usize = 2000;
const STDOUT_LIMIT: u64 = 1 << 20;
const ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "PYTHONPATH", "SYSTEMROOT"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Failed,
    Timeout,
}

impl From<EvalStatus> for RecordStatus {
    fn from(s: EvalStatus) -> Self {
        match s {
            EvalStatus::Ok => RecordStatus::Ok,
            EvalStatus::Failed => RecordStatus::Failed,
            EvalStatus::Timeout => RecordStatus::Timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub status: EvalStatus,
    pub metrics: BTreeMap<String, f64>,
    pub reported_score: Option<f64>,
    pub combined_score: f64,
    pub wall_ms: u64,
    pub error: Option<String>,
    pub stderr: String,
}

impl EvaluationOutcome {
    fn failed(error: String, wall_ms: u64, stderr: String) -> Self {
        EvaluationOutcome {
            status: EvalStatus::Failed,
            metrics: BTreeMap::new(),
            reported_score: None,
            combined_score: 0.0,
            wall_ms,
            error: Some(error),
            stderr,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("task `{task}` has no usable runner: {reason}")]
    RunnerMissing { task: String, reason: String },
    #[error("evaluation setup failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can score a candidate for a task.
pub trait Oracle {
    fn evaluate(&mut self, code: &str, task: &TaskSpec) -> Result<EvaluationOutcome, EvaluatorError>;

    /// Startup check that `task` can be evaluated at all.
    fn check(&self, _task: &TaskSpec) -> Result<(), EvaluatorError> {
        Ok(())
    }
}

/// Checks that the task has a runner whose program can be found.
pub fn resolve_runner(task: &TaskSpec) -> Result<Vec<String>, EvaluatorError> {
    let missing = |reason: String| EvaluatorError::RunnerMissing { task: task.name.clone(), reason };
    let runner = task.runner.clone().ok_or_else(|| missing("no runner configured".into()))?;
    let program = runner.first().ok_or_else(|| missing("runner command is empty".into()))?;
    if program.contains('/') {
        if !Path::new(program).is_file() {
            return Err(missing(format!("`{program}` does not exist")));
        }
    } else {
        let path = std::env::var_os("PATH").unwrap_or_default();
        if !std::env::split_paths(&path).any(|dir| dir.join(program).is_file()) {
            return Err(missing(format!("`{program}` not found on PATH")));
        }
    }
    Ok(runner)
}

pub struct SubprocessEvaluator {
    cache: Option<HashMap<u64, EvaluationOutcome>>,
    runner_invocations: u64,
}

impl SubprocessEvaluator {
    pub fn new(cache_enabled: bool) -> Self {
        SubprocessEvaluator { cache: cache_enabled.then(HashMap::new), runner_invocations: 0 }
    }

    pub fn runner_invocations(&self) -> u64 {
        self.runner_invocations
    }

    /// Outcome of the first evaluation of exactly this code, if cached.
    pub fn cache_lookup(&self, hash: u64) -> Option<&EvaluationOutcome> {
        self.cache.as_ref()?.get(&hash)
    }

    fn run_runner(&mut self, code: &str, task: &TaskSpec) -> Result<EvaluationOutcome, EvaluatorError> {
        let runner = resolve_runner(task)?;
        let dir = tempfile::Builder::new().prefix("contextevolve-eval-").tempdir()?;
        let candidate: PathBuf = dir.path().join(format!("candidate.{}", task.candidate_extension));
        std::fs::write(&candidate, code)?;
        let stdout_path = dir.path().join("stdout");
        let stderr_path = dir.path().join("stderr");

        let mut cmd = Command::new(&runner[0]);
        cmd.args(&runner[1..])
            .arg("--task")
            .arg(&task.name)
            .arg("--candidate")
            .arg(&candidate)
            .current_dir(dir.path())
            .env_clear()
            .envs(ENV_ALLOWLIST.iter().filter_map(|k| std::env::var_os(k).map(|v| (*k, v))))
            .stdin(Stdio::null())
            .stdout(File::create(&stdout_path)?)
            .stderr(File::create(&stderr_path)?)
            .process_group(0);

        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(EvaluatorError::RunnerMissing { task: task.name.clone(), reason: e.to_string() })
            }
            Err(e) => return Err(e.into()),
        };
        self.runner_invocations += 1;
        let timeout = Duration::from_millis(task.timeout_ms);
        let pgid = child.id() as libc::pid_t;
        let (exit, timed_out) = loop {
            if let Some(status) = child.try_wait()? {
                break (Some(status), false);
            }
            if started.elapsed() >= timeout {
                // SAFETY: signalling a process group we created; failure is harmless.
                unsafe { libc::kill(-pgid, libc::SIGKILL) };
                let _ = child.wait();
                break (None, true);
            }
            std::thread::sleep(Duration::from_millis(2));
        };
        // stragglers forked by the runner
        unsafe { libc::kill(-pgid, libc::SIGKILL) };
        let wall_ms = started.elapsed().as_millis() as u64;

        let stderr = read_excerpt(&stderr_path, STDERR_EXCERPT_BYTES);
        if timed_out {
            return Ok(EvaluationOutcome {
                status: EvalStatus::Timeout,
                metrics: BTreeMap::new(),
                reported_score: None,
                combined_score: 0.0,
                wall_ms,
                error: Some(format!("killed after {} ms", task.timeout_ms)),
                stderr,
            });
        }
        let exit = exit.expect("not timed out");
        if !exit.success() {
            return Ok(EvaluationOutcome::failed(format!("runner exited with {exit}"), wall_ms, stderr));
        }
        let stdout = read_excerpt(&stdout_path, STDOUT_LIMIT as usize);
        Ok(interpret(&stdout, task, wall_ms, stderr))
    }
}

impl Oracle for SubprocessEvaluator {
    fn check(&self, task: &TaskSpec) -> Result<(), EvaluatorError> {
        resolve_runner(task).map(|_| ())
    }

    fn evaluate(&mut self, code: &str, task: &TaskSpec) -> Result<EvaluationOutcome, EvaluatorError> {
        let hash = code_hash(code);
        if let Some(hit) = self.cache_lookup(hash) {
            return Ok(hit.clone());
        }
        let outcome = self.run_runner(code, task)?;
        if let Some(cache) = self.cache.as_mut() {
            cache.insert(hash, outcome.clone());
        }
        Ok(outcome)
    }
}

/// Outcome for a runner that exited 0 with `stdout`.
fn interpret(stdout: &str, task: &TaskSpec, wall_ms: u64, stderr: String) -> EvaluationOutcome {
    match parse_reply(stdout) {
        Err(msg) => EvaluationOutcome::failed(msg, wall_ms, stderr),
        Ok(Reply::Failed(msg)) => EvaluationOutcome::failed(msg, wall_ms, stderr),
        Ok(Reply::Ok(metrics)) => score(metrics, task, wall_ms, stderr),
    }
}

fn score(metrics: BTreeMap<String, f64>, task: &TaskSpec, wall_ms: u64, stderr: String) -> EvaluationOutcome {
    let combined = task.scoring_rule().and_then(|rule| combine(&metrics, &rule).map_err(|e| e.to_string()));
    match combined {
        Ok((reported, combined)) => EvaluationOutcome {
            status: EvalStatus::Ok,
            metrics,
            reported_score: Some(reported),
            combined_score: combined,
            wall_ms,
            error: None,
            stderr,
        },
        Err(msg) => EvaluationOutcome::failed(msg, wall_ms, stderr),
    }
}

fn read_excerpt(path: &Path, limit: usize) -> String {
    let mut buf = Vec::new();
    if let Ok(f) = File::open(path) {
        let _ = f.take(limit as u64).read_to_end(&mut buf);
    }
    let mut s = String::from_utf8_lossy(&buf).into_owned();
    while s.len() > limit {
        s.pop();
    }
    s
}

#[derive(Debug, PartialEq)]
enum Reply {
    Ok(BTreeMap<String, f64>),
    Failed(String),
}

/// Strict parse of the runner's single stdout line.
fn parse_reply(stdout: &str) -> Result<Reply, String> {
    let body = stdout.strip_suffix('\n').unwrap_or(stdout);
    let body = body.strip_suffix('\r').unwrap_or(body);
    if body.is_empty() {
        return Err("runner printed nothing".into());
    }
    if body.contains('\n') {
        return Err("runner printed more than one line".into());
    }
    let value: Value = serde_json::from_str(body).map_err(|e| format!("runner output is not JSON: {e}"))?;
    let obj = value.as_object().ok_or("runner output is not a JSON object")?;
    let keys = |expected: &[&str]| obj.len() == expected.len() && expected.iter().all(|k| obj.contains_key(*k));
    match obj.get("status").and_then(Value::as_str) {
        Some("ok") if keys(&["status", "metrics"]) => {
            let raw = obj["metrics"].as_object().ok_or("`metrics` is not an object")?;
            let mut metrics = BTreeMap::new();
            for (k, v) in raw {
                let x = v.as_f64().ok_or_else(|| format!("metric `{k}` is not a number"))?;
                metrics.insert(k.clone(), x);
            }
            Ok(Reply::Ok(metrics))
        }
        Some("failed") if keys(&["status", "error"]) => {
            let msg = obj["error"].as_str().ok_or("`error` is not a string")?;
            Ok(Reply::Failed(msg.to_string()))
        }
        _ => Err("runner output does not match the protocol".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_shapes() {
        assert_eq!(
            parse_reply("{\"status\":\"ok\",\"metrics\":{\"q\":0.5}}\n"),
            Ok(Reply::Ok([("q".to_string(), 0.5)].into_iter().collect()))
        );
        assert_eq!(
            parse_reply("{\"status\":\"failed\",\"error\":\"ZeroDivisionError: x\"}"),
            Ok(Reply::Failed("ZeroDivisionError: x".into()))
        );
        for bad in [
            "",
            "hello",
            "{\"status\":\"ok\"}",
            "{\"status\":\"ok\",\"metrics\":{\"q\":\"high\"}}",
            "{\"status\":\"ok\",\"metrics\":{},\"extra\":1}",
            "{\"status\":\"failed\"}",
            "{\"status\":\"weird\",\"error\":\"x\"}",
            "noise\n{\"status\":\"ok\",\"metrics\":{}}",
            "[1,2]",
        ] {
            assert!(parse_reply(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn missing_runner() {
        let mut task = crate::tasks::lookup("sak").unwrap();
        assert!(matches!(resolve_runner(&task), Err(EvaluatorError::RunnerMissing { .. })));
        task.runner = Some(vec!["/definitely/not/here".into()]);
        assert!(matches!(resolve_runner(&task), Err(EvaluatorError::RunnerMissing { .. })));
        task.runner = Some(vec!["no-such-program-xyz".into()]);
        assert!(matches!(resolve_runner(&task), Err(EvaluatorError::RunnerMissing { .. })));
    }

    proptest::proptest! {
        #[test]
        fn non_ok_scores_zero(
            names in proptest::collection::btree_set(proptest::sample::select(vec!["balance", "speed", "other"]), 0..3),
            values in proptest::collection::vec(-10.0..10.0f64, 3),
            noise in "[ -~]{0,40}",
            shape in 0u8..4,
        ) {
            let task = crate::tasks::lookup("toy-lb").unwrap();
            let metrics: serde_json::Map<String, serde_json::Value> =
                names.iter().zip(&values).map(|(n, v)| (n.to_string(), serde_json::json!(v))).collect();
            let stdout = match shape {
                0 => serde_json::json!({"status": "ok", "metrics": metrics}).to_string(),
                1 => serde_json::json!({"status": "failed", "error": noise}).to_string(),
                2 => format!("{noise}\n{}", serde_json::json!({"status": "ok", "metrics": metrics})),
                _ => noise.clone(),
            };
            let out = interpret(&stdout, &task, 1, String::new());
            if out.status == EvalStatus::Ok {
                proptest::prop_assert!(names.contains("balance") && names.contains("speed"));
                proptest::prop_assert!(out.reported_score.is_some() && !out.metrics.is_empty());
            } else {
                proptest::prop_assert_eq!(out.combined_score, 0.0);
                proptest::prop_assert!(out.reported_score.is_none() && out.metrics.is_empty());
                proptest::prop_assert!(out.error.is_some());
            }
        }
    }
}
