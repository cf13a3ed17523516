//! Command-line surface. Results go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use contextevolve_core::text::fmt_num;

use crate::config::RunConfig;
use crate::orchestrator::{self, RunError, RunOptions, RunResult};
use crate::report::{self, LabeledLog};
use crate::runlog::{LogError, StopReason};
use crate::tasks;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "contextevolve", version, about = "Evolutionary code optimization with compressed LLM context")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Write every LLM request and response to the run log.
    #[arg(long)]
    pub trace_llm: bool,
    /// No per-iteration progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one evolution.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted override, e.g. `--set max_iterations=2`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for the run log (`run.jsonl`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Continue an interrupted run from its log.
    Resume {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run several configs on the same task and seed and report them side by side.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write CSV, summary and SVG files from run logs.
    Report {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the registered tasks.
    Tasks,
}

fn opts(c: &Common) -> RunOptions {
    RunOptions { progress: !c.quiet, trace_llm: c.trace_llm }
}

fn error_code(e: &RunError) -> i32 {
    match e {
        RunError::Evaluation(_) => EXIT_ABORTED,
        RunError::Log(LogError::Io { .. }) => EXIT_ABORTED,
        _ => EXIT_CONFIG,
    }
}

fn print_result(r: &RunResult, log: Option<&Path>) -> i32 {
    println!("best: #{} combined {}", r.best.id, fmt_num(r.best.combined_score));
    if let Some(rep) = r.best.reported_score {
        println!("reported: {}", fmt_num(rep));
    }
    println!("iterations: {}", r.iterations_completed);
    println!("stop: {}", r.stop_reason.as_str());
    println!("tokens: {}", r.cumulative_tokens.last().copied().unwrap_or(0));
    if let Some(p) = log {
        println!("log: {}", p.display());
    }
    if r.stop_reason == StopReason::Aborted {
        eprintln!("error: run aborted: {}", r.error.as_deref().unwrap_or("unknown"));
        EXIT_ABORTED
    } else {
        EXIT_OK
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, i32> {
    RunConfig::load(path, overrides).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    })
}

fn run_cmd(config: &Path, overrides: &[String], out: Option<&Path>, common: &Common) -> i32 {
    let mut cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(dir) = out {
        cfg.run_log = Some(dir.join("run.jsonl"));
    } else if cfg.run_log.is_none() {
        cfg.run_log = Some(PathBuf::from("run.jsonl"));
    }
    match orchestrator::run(&cfg, overrides, opts(common)) {
        Ok(r) => print_result(&r, cfg.run_log.as_deref()),
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

fn compare_cmd(configs: &[PathBuf], overrides: &[String], out: &Path, common: &Common) -> i32 {
    let mut cfgs = Vec::new();
    for p in configs {
        match load(p, overrides) {
            Ok(c) => cfgs.push(c),
            Err(code) => return code,
        }
    }
    let labels = orchestrator::unique_labels(&cfgs);
    for (cfg, label) in cfgs.iter_mut().zip(&labels) {
        cfg.run_log = Some(out.join(format!("{label}.jsonl")));
    }
    let rows = match orchestrator::compare(&cfgs, opts(common)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    let logs: Vec<LabeledLog> = rows.into_iter().map(|r| LabeledLog { label: r.label, log: r.result.log }).collect();
    let aborted = logs.iter().any(|l| l.log.stop.as_ref().is_some_and(|s| s.reason == StopReason::Aborted));
    print!("{}", report::summary_text(&logs));
    if let Err(e) = report::emit_report(logs, out) {
        eprintln!("error: cannot write report: {e}");
        return EXIT_ABORTED;
    }
    if aborted {
        EXIT_ABORTED
    } else {
        EXIT_OK
    }
}

fn report_cmd(logs: &[PathBuf], out: &Path) -> i32 {
    let logs = match report::read_logs(logs) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match report::emit_report(logs, out) {
        Ok(bundles) => {
            for b in bundles {
                println!("{}: {}", b.task, b.dir.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            EXIT_ABORTED
        }
    }
}

fn tasks_cmd() -> i32 {
    for t in tasks::registry() {
        let metrics: Vec<String> = t
            .metrics
            .iter()
            .map(|m| format!("{}{}", m.name, if m.direction == contextevolve_core::scoring::MetricDirection::Maximize { "↑" } else { "↓" }))
            .collect();
        let kind = if t.is_runnable() { "runnable" } else { "metadata" };
        println!("{}\t{}\t{}\t{}", t.name, kind, metrics.join(" "), t.description);
    }
    EXIT_OK
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.command {
        Command::Run { config, overrides, out, common } => run_cmd(config, overrides, out.as_deref(), common),
        Command::Resume { log, common } => match orchestrator::resume(log, opts(common)) {
            Ok(r) => print_result(&r, Some(log)),
            Err(e) => {
                eprintln!("error: {e}");
                error_code(&e)
            }
        },
        Command::Compare { configs, overrides, out, common } => compare_cmd(configs, overrides, out, common),
        Command::Report { logs, out } => report_cmd(logs, out),
        Command::Tasks => tasks_cmd(),
    }
}
