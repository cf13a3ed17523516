//! JSONL run log: header, seed, one line per iteration, optional LLM traces,
//! and a stop trailer. Floats are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use contextevolve_core::llm::{AgentRole, Usage, UsageLedger};
use contextevolve_core::record::{EvolveRecord, RecordId, RecordStatus};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluator::EvalStatus;
use crate::numfmt::to_json_line;
use crate::tasks::TaskSpec;

pub const FORMAT_VERSION: u32 = 1;

/// Keys whose values depend on the wall clock.
pub const VOLATILE_KEYS: &[&str] = &["created_at", "started_at", "wall_ms", "latency_ms"];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt run log `{path}` at line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("run log io error on `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationsExhausted,
    TokenBudgetExhausted,
    Aborted,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::IterationsExhausted => "iterations_exhausted",
            StopReason::TokenBudgetExhausted => "token_budget_exhausted",
            StopReason::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: Value,
    pub overrides: Vec<String>,
    pub template_hash: String,
    pub task: TaskSpec,
    pub started_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    /// `None` when the candidate never reached the evaluator.
    pub status: Option<EvalStatus>,
    pub cached: bool,
    pub wall_ms: u64,
    pub error: Option<String>,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub phase: String,
    pub role: AgentRole,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub record: EvolveRecord,
    pub evaluation: EvaluationSummary,
    pub usage: Vec<PhaseUsage>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// `None` only for one-shot generation.
    pub parent_id: Option<RecordId>,
    /// Phases in the order they ran.
    pub phases: Vec<String>,
    pub trajectories: Vec<Vec<RecordId>>,
    pub guidance: Option<String>,
    pub exemplar_ids: Vec<RecordId>,
    pub context_tokens: u64,
    pub child_id: RecordId,
    pub status: RecordStatus,
    pub usage: Vec<PhaseUsage>,
    pub flags: Vec<String>,
    pub evaluation: EvaluationSummary,
    pub child: EvolveRecord,
    pub wall_ms: u64,
}

impl IterationRecord {
    pub fn total_usage(&self) -> Usage {
        sum_usage(&self.usage)
    }
}

pub fn sum_usage(phases: &[PhaseUsage]) -> Usage {
    let mut u = Usage::default();
    for p in phases {
        u.add(&p.usage);
    }
    u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub role: AgentRole,
    pub request_id: String,
    pub model: String,
    pub system: String,
    pub user: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEntry {
    pub reason: StopReason,
    pub iterations_completed: u32,
    /// Tokens spent by an iteration that did not complete.
    pub unlogged_usage: Vec<PhaseUsage>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(Header),
    Seed(SeedEntry),
    Iteration(IterationRecord),
    Trace(TraceEntry),
    Stop(StopEntry),
}

/// A parsed run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: Header,
    pub seed: Option<SeedEntry>,
    pub iterations: Vec<IterationRecord>,
    pub stop: Option<StopEntry>,
    pub traces: usize,
}

/// Derived per-run series, shared by the orchestrator and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Best combined score after the seed and after each iteration.
    pub best_so_far: Vec<f64>,
    /// Cumulative total tokens at the same points.
    pub cumulative_tokens: Vec<u64>,
    /// Iterations whose child strictly raised the best score.
    pub improvement_updates: u32,
    pub ledger: UsageLedger,
    pub best_id: Option<RecordId>,
}

impl RunLog {
    pub fn read(path: &Path) -> Result<Self, LogError> {
        let file = File::open(path).map_err(|source| LogError::Io { path: path.into(), source })?;
        let mut lines = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| LogError::Io { path: path.into(), source })?;
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            lines.push((i + 1, parsed));
        }
        Self::from_lines(lines).map_err(|(line, message)| LogError::Corrupt { path: path.into(), line, message })
    }

    /// Assembles a log from numbered lines, checking their order.
    pub fn from_lines(lines: Vec<(usize, LogLine)>) -> Result<Self, (usize, String)> {
        let mut it = lines.into_iter();
        let header = match it.next() {
            Some((_, LogLine::Header(h))) => h,
            Some((n, _)) => return Err((n, "first line is not a header".into())),
            None => return Err((1, "empty log".into())),
        };
        if header.format_version != FORMAT_VERSION {
            return Err((1, format!("unsupported format_version {}", header.format_version)));
        }
        let mut log = RunLog { header, seed: None, iterations: Vec::new(), stop: None, traces: 0 };
        for (n, line) in it {
            if log.stop.is_some() {
                return Err((n, "line after stop trailer".into()));
            }
            match line {
                LogLine::Header(_) => return Err((n, "duplicate header".into())),
                LogLine::Seed(s) => {
                    if log.seed.is_some() {
                        return Err((n, "duplicate seed".into()));
                    }
                    log.seed = Some(s);
                }
                LogLine::Iteration(rec) => {
                    let expected = log.iterations.len() as u32 + 1;
                    if log.seed.is_none() || rec.iteration != expected {
                        return Err((n, format!("expected iteration {expected}, found {}", rec.iteration)));
                    }
                    log.iterations.push(rec);
                }
                LogLine::Trace(_) => log.traces += 1,
                LogLine::Stop(s) => log.stop = Some(s),
            }
        }
        Ok(log)
    }

    pub fn is_complete(&self) -> bool {
        self.stop.as_ref().is_some_and(|s| s.reason != StopReason::Aborted)
    }

    pub fn records(&self) -> Vec<&EvolveRecord> {
        self.seed.iter().map(|s| &s.record).chain(self.iterations.iter().map(|i| &i.child)).collect()
    }

    pub fn series(&self) -> Series {
        let mut ledger = UsageLedger::default();
        let mut best: Option<&EvolveRecord> = None;
        let mut best_so_far = Vec::new();
        let mut cumulative_tokens = Vec::new();
        let mut improvement_updates = 0;
        let entries = self
            .seed
            .iter()
            .map(|s| (&s.record, s.usage.as_slice()))
            .chain(self.iterations.iter().map(|i| (&i.child, i.usage.as_slice())));
        for (rec, usage) in entries {
            for p in usage {
                ledger.record(p.role, &p.usage);
            }
            let better = match best {
                None => true,
                Some(b) => rec.is_ok() && (!b.is_ok() || rec.combined_score > b.combined_score),
            };
            if better {
                if best.is_some() {
                    improvement_updates += 1;
                }
                best = Some(rec);
            }
            best_so_far.push(best.map_or(0.0, |b| b.combined_score));
            cumulative_tokens.push(ledger.total().total_tokens());
        }
        if let (Some(stop), Some(last)) = (&self.stop, cumulative_tokens.last_mut()) {
            for p in &stop.unlogged_usage {
                ledger.record(p.role, &p.usage);
            }
            *last = ledger.total().total_tokens();
        }
        Series { best_so_far, cumulative_tokens, improvement_updates, ledger, best_id: best.map(|b| b.id) }
    }
}

/// Zeroes every volatile key, recursively.
pub fn normalize(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if VOLATILE_KEYS.contains(&k.as_str()) && v.is_number() {
                    *v = Value::from(0);
                } else {
                    normalize(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

/// Log text with volatile fields zeroed, one JSON line per input line.
pub fn normalized_text(text: &str) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for line in text.lines() {
        let mut v: Value = serde_json::from_str(line)?;
        normalize(&mut v);
        out.push_str(&to_json_line(&v)?);
        out.push('\n');
    }
    Ok(out)
}

/// Append-only writer that also keeps the parsed lines in memory.
pub struct LogWriter {
    file: Option<(PathBuf, File)>,
    lines: Vec<LogLine>,
}

impl LogWriter {
    pub fn create(path: Option<&Path>) -> Result<Self, LogError> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|source| LogError::Io { path: p.into(), source })?;
                }
                let f = File::create(p).map_err(|source| LogError::Io { path: p.into(), source })?;
                Some((p.to_path_buf(), f))
            }
            None => None,
        };
        Ok(LogWriter { file, lines: Vec::new() })
    }

    /// Reopens an existing log for appending.
    pub fn append(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io { path: path.into(), source };
        let f = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(LogWriter { file: Some((path.to_path_buf(), f)), lines: Vec::new() })
    }

    pub fn write(&mut self, line: LogLine) -> Result<(), LogError> {
        if let Some((path, f)) = self.file.as_mut() {
            let mut text = to_json_line(&line).map_err(|e| LogError::Io { path: path.clone(), source: e.into() })?;
            text.push('\n');
            f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(|source| LogError::Io { path: path.clone(), source })?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[LogLine] {
        &self.lines
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }
}

/// Per-role usage of a sequence of phases.
pub fn usage_by_role(phases: &[PhaseUsage]) -> BTreeMap<AgentRole, Usage> {
    let mut m = BTreeMap::new();
    for p in phases {
        m.entry(p.role).or_insert_with(Usage::default).add(&p.usage);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn normalize_zeroes_volatile_keys_only() {
        let mut v = json!({"created_at": 17, "a": {"wall_ms": 5, "latency_ms": 3, "keep": 9}, "l": [{"started_at": 1}]});
        normalize(&mut v);
        assert_eq!(v, json!({"created_at": 0, "a": {"wall_ms": 0, "latency_ms": 0, "keep": 9}, "l": [{"started_at": 0}]}));
    }

    #[test]
    fn order_is_checked() {
        let header = LogLine::Header(Header {
            format_version: FORMAT_VERSION,
            config: json!({}),
            overrides: vec![],
            template_hash: "h".into(),
            task: crate::tasks::lookup("toy-lb").unwrap(),
            started_at: 0,
        });
        let stop = LogLine::Stop(StopEntry {
            reason: StopReason::Aborted,
            iterations_completed: 0,
            unlogged_usage: Vec::new(),
            error: None,
        });
        assert!(RunLog::from_lines(vec![(1, header.clone()), (2, stop.clone())]).is_ok());
        assert_eq!(RunLog::from_lines(vec![(1, stop.clone())]).unwrap_err().0, 1);
        assert_eq!(RunLog::from_lines(vec![(1, header.clone()), (2, stop.clone()), (3, stop)]).unwrap_err().0, 3);
    }
}
