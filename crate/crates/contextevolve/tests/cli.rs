mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use contextevolve::runlog::RunLog;
use contextevolve_core::llm::AgentRole;
use contextevolve_core::mock::{MockRule, MockScript};
use serde_json::json;

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contextevolve")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let fx = Fixture::new();
    let o = cli(&["run", "--config", "nowhere/run.json"], fx.dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/run.json"), "{}", stderr(&o));
}

#[test]
fn invalid_config_is_a_config_error() {
    let fx = Fixture::new();
    let cfg = fx.write_config("bad.json", &standard_script(), &[("max_iterations", json!(-1))]);
    let o = cli(&["run", "--config", s(&cfg)], fx.dir.path());
    assert_eq!(o.status.code(), Some(2));
    let cfg = fx.write_config("typo.json", &standard_script(), &[("max_iteratons", json!(3))]);
    let o = cli(&["run", "--config", s(&cfg)], fx.dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_iteratons"));
}

#[test]
fn missing_runner_is_a_config_error() {
    let fx = Fixture::new();
    let cfg = fx.write_config("r.json", &standard_script(), &[("runner", json!(["/nonexistent/runner"]))]);
    let o = cli(&["run", "--config", s(&cfg), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("toy-lb"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let fx = Fixture::new();
    assert_eq!(cli(&["frobnicate"], fx.dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["run"], fx.dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["--help"], fx.dir.path()).status.code(), Some(0));
}

#[test]
fn tasks_are_listed() {
    let fx = Fixture::new();
    let o = cli(&["tasks"], fx.dir.path());
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<String> = stdout(&o).lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
    for t in ["ts", "sql", "lb", "sak", "mp", "toy-lb", "toy-ts"] {
        assert!(names.iter().any(|n| n == t), "{t} missing from {names:?}");
    }
}

#[test]
fn run_with_override_then_report() {
    let fx = Fixture::new();
    let cfg = fx.write_config("run.json", &standard_script(), &[]);
    let out = fx.path("out");
    let o = cli(&["run", "--config", s(&cfg), "--set", "max_iterations=2", "--out", s(&out), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("iterations: 2"));
    assert!(stdout(&o).contains("stop: iterations_exhausted"));
    let log = RunLog::read(&out.join("run.jsonl")).unwrap();
    assert_eq!(log.header.overrides, vec!["max_iterations=2".to_string()]);
    assert_eq!(log.header.config["max_iterations"], json!(2));
    assert_eq!(log.iterations.len(), 2);

    let o = cli(&["run", "--config", s(&cfg), "--out", s(&out), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rep = fx.path("rep");
    let o = cli(&["report", "--log", s(&out.join("run.jsonl")), "--out", s(&rep)], fx.dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let best = read(&rep.join("best_so_far.csv"));
    let rows: Vec<&str> = best.lines().collect();
    assert_eq!(rows[0], "iteration,run");
    assert_eq!(rows.len(), 1 + 4);
    let tokens = read(&rep.join("tokens.csv"));
    let log = RunLog::read(&out.join("run.jsonl")).unwrap();
    let total = log.series().ledger.total().total_tokens();
    assert_eq!(tokens.lines().last().unwrap(), format!("3,{total}"));
    for f in ["summary.txt", "best_so_far.svg", "tokens.svg"] {
        assert!(rep.join(f).is_file(), "{f}");
    }
    let first: Vec<Vec<u8>> =
        ["best_so_far.csv", "tokens.csv", "summary.txt", "best_so_far.svg"].iter().map(|f| std::fs::read(rep.join(f)).unwrap()).collect();
    cli(&["report", "--log", s(&out.join("run.jsonl")), "--out", s(&rep)], fx.dir.path());
    let second: Vec<Vec<u8>> =
        ["best_so_far.csv", "tokens.csv", "summary.txt", "best_so_far.svg"].iter().map(|f| std::fs::read(rep.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn report_splits_tasks() {
    let fx = Fixture::new();
    let lb = fx.write_config("lb.json", &standard_script(), &[("run_log", json!("lb.jsonl"))]);
    let ts = fx.write_config("ts.json", &standard_script(), &[("task", json!("toy-ts")), ("run_log", json!("ts.jsonl"))]);
    for c in [&lb, &ts] {
        let o = cli(&["run", "--config", s(c), "-q"], fx.dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let rep = fx.path("rep");
    let o = cli(&["report", "--log", s(&fx.path("lb.jsonl")), "--log", s(&fx.path("ts.jsonl")), "--out", s(&rep)], fx.dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(rep.join("toy-lb/best_so_far.csv").is_file());
    assert!(rep.join("toy-ts/best_so_far.csv").is_file());
    assert!(!rep.join("best_so_far.csv").exists());
}

#[test]
fn compare_writes_one_log_per_config() {
    let fx = Fixture::new();
    let full = fx.write_config("full.json", &standard_script(), &[]);
    let abl = fx.write_config("abl.json", &standard_script(), &[("ablation", json!({"disable_sampler": true}))]);
    let out = fx.path("cmp");
    let o = cli(&["compare", "--config", s(&full), "--config", s(&abl), "--out", s(&out), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("contextevolve.jsonl").is_file());
    assert!(out.join("contextevolve-no_sampler.jsonl").is_file());
    assert_eq!(read(&out.join("best_so_far.csv")).lines().next().unwrap(), "iteration,contextevolve,contextevolve-no_sampler");

    let other = fx.write_config("other.json", &standard_script(), &[("task", json!("toy-ts"))]);
    let o = cli(&["compare", "--config", s(&full), "--config", s(&other), "--out", s(&out), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn aborted_run_exits_three_and_resumes() {
    let fx = Fixture::new();
    let broken = MockScript::always("x")
        .with_rule(MockRule::cycle(Some(AgentRole::Summarizer), summarizer_replies()))
        .with_rule(MockRule::failing(Some(AgentRole::Generator), "connection reset"));
    let cfg = fx.write_config("run.json", &broken, &[("run_log", json!("run.jsonl"))]);
    let o = cli(&["run", "--config", s(&cfg), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("connection reset"));
    let log = RunLog::read(&fx.path("run.jsonl")).unwrap();
    assert_eq!(log.stop.unwrap().reason.as_str(), "aborted");

    // the backend recovers: patch the script in the header and resume
    let text = read(&fx.path("run.jsonl"));
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[0]["config"]["backend"]["inline"] = serde_json::to_value(standard_script()).unwrap();
    let patched: String = lines.iter().map(|v| format!("{}\n", serde_json::to_string(v).unwrap())).collect();
    std::fs::write(fx.path("run.jsonl"), patched).unwrap();
    let o = cli(&["resume", "--log", s(&fx.path("run.jsonl")), "-q"], fx.dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = RunLog::read(&fx.path("run.jsonl")).unwrap();
    assert!(log.is_complete());
    assert_eq!(log.iterations.len(), 3);
}
