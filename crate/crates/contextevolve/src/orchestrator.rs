//! The evolution loop: seed, then per iteration select a parent, distill
//! guidance from trajectories, curate exemplars, compose the context,
//! generate, evaluate, summarize and update the buffer. Every finished
//! iteration is appended to the run log before the next one starts.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use contextevolve_core::agents::{
    compose_context, fallback_abstract, top_score_only, AgentError, Agents, ComposeParams, ContextInputs, Guidance,
    StepTriple, Strategy, TrajectorySample,
};
use contextevolve_core::buffer::{BufferError, EvolveBuffer};
use contextevolve_core::llm::{AgentRole, Llm, Provider, UsageLedger};
use contextevolve_core::mock::MockProvider;
use contextevolve_core::record::{code_hash, EvolveRecord, NewRecord, RecordId, RecordStatus};
use contextevolve_core::rng::{stream_seed, Purpose};
use contextevolve_core::template::TemplateSet;
use contextevolve_core::trajectory::sample_by_category;
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError, RunConfig};
use crate::evaluator::{EvaluationOutcome, EvaluatorError, Oracle, SubprocessEvaluator};
use crate::runlog::{
    EvaluationSummary, Header, IterationRecord, LogError, LogLine, LogWriter, PhaseUsage, RunLog,
    SeedEntry, StopEntry, StopReason, TraceEntry, FORMAT_VERSION,
};
use crate::tasks::TaskSpec;
use crate::wire::WireProvider;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    RunnerMissing(EvaluatorError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot read seed code `{path}`: {source}")]
    SeedCode { path: PathBuf, source: std::io::Error },
    #[error("evaluation failed: {0}")]
    Evaluation(EvaluatorError),
    #[error("configs cannot be compared: {0}")]
    IncompatibleConfigs(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// One stderr line per iteration.
    pub progress: bool,
    /// Write every LLM request and response to the run log.
    pub trace_llm: bool,
}

/// Backend and oracle used by a run.
pub struct RunEnv {
    pub provider: Box<dyn Provider>,
    pub oracle: Box<dyn Oracle>,
}

impl RunEnv {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, RunError> {
        let provider: Box<dyn Provider> = match &cfg.backend {
            BackendConfig::Mock { .. } => {
                Box::new(MockProvider::new(cfg.mock_script()?.expect("mock backend has a script")))
            }
            BackendConfig::Openai { request_timeout_ms } => {
                Box::new(WireProvider::from_env(Duration::from_millis(*request_timeout_ms)))
            }
        };
        Ok(RunEnv { provider, oracle: Box::new(SubprocessEvaluator::new(cfg.evaluation_cache)) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best: EvolveRecord,
    pub best_so_far: Vec<f64>,
    pub cumulative_tokens: Vec<u64>,
    pub improvement_updates: u32,
    pub iterations_completed: u32,
    pub stop_reason: StopReason,
    pub error: Option<String>,
    pub ledger: UsageLedger,
    pub log: RunLog,
}

impl RunResult {
    fn from_log(log: RunLog) -> Self {
        let series = log.series();
        let stop = log.stop.clone().expect("finished log has a stop trailer");
        let best = log
            .records()
            .into_iter()
            .find(|r| Some(r.id) == series.best_id)
            .cloned()
            .expect("finished log has a seed record");
        let ledger = series.ledger.clone();
        RunResult {
            best,
            best_so_far: series.best_so_far,
            cumulative_tokens: series.cumulative_tokens,
            improvement_updates: series.improvement_updates,
            iterations_completed: stop.iterations_completed,
            stop_reason: stop.reason,
            error: stop.error,
            ledger,
            log,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Runs with the backend and evaluator described by the config.
pub fn run(cfg: &RunConfig, overrides: &[String], opts: RunOptions) -> Result<RunResult, RunError> {
    let env = RunEnv::from_config(cfg)?;
    run_with(cfg, overrides, env, opts)
}

pub fn run_with(cfg: &RunConfig, overrides: &[String], env: RunEnv, opts: RunOptions) -> Result<RunResult, RunError> {
    let task = cfg.task_spec()?;
    let templates = cfg.templates()?;
    env.oracle.check(&task).map_err(RunError::RunnerMissing)?;
    let seed_code = std::fs::read_to_string(&cfg.seed_code)
        .map_err(|source| RunError::SeedCode { path: cfg.seed_code.clone(), source })?;
    if seed_code.is_empty() {
        return Err(ConfigError::Invalid(format!("seed code `{}` is empty", cfg.seed_code.display())).into());
    }
    let mut writer = LogWriter::create(cfg.run_log.as_deref())?;
    writer.write(LogLine::Header(Header {
        format_version: FORMAT_VERSION,
        config: cfg.to_value(),
        overrides: overrides.to_vec(),
        template_hash: templates.version_hash(),
        task: task.clone(),
        started_at: now_ms(),
    }))?;
    let mut engine = Engine::new(cfg.clone(), task, templates, env, writer, opts, UsageLedger::default());
    let seed_halt = engine.seed(seed_code)?;
    let stop = match seed_halt {
        Some(h) => engine.stop(h, 0)?,
        None => engine.iterate_from(1)?,
    };
    let lines: Vec<(usize, LogLine)> = engine.writer.lines().iter().cloned().enumerate().collect();
    let log = RunLog::from_lines(lines).expect("writer produced a well-formed log");
    debug_assert_eq!(log.stop.as_ref(), Some(&stop));
    Ok(RunResult::from_log(log))
}

/// Continues an interrupted run from its log. A finished log is returned
/// as is, without any backend or runner activity.
pub fn resume(path: &Path, opts: RunOptions) -> Result<RunResult, RunError> {
    let log = RunLog::read(path)?;
    let mut cfg = RunConfig::from_value(log.header.config.clone(), &[], Path::new("/"))?;
    cfg.run_log = Some(path.to_path_buf());
    let env = RunEnv::from_config(&cfg)?;
    resume_with(path, log, cfg, env, opts)
}

pub fn resume_with(path: &Path, log: RunLog, cfg: RunConfig, env: RunEnv, opts: RunOptions) -> Result<RunResult, RunError> {
    if log.is_complete() {
        return Ok(RunResult::from_log(log));
    }
    let mut log = log;
    log.stop = None;
    // drop an abort trailer and any traces of the unfinished iteration; they are replayed
    let io = |source| LogError::Io { path: path.into(), source };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let mut keep = text.len();
    loop {
        let body = text[..keep].trim_end_matches('\n');
        let line = body.rsplit('\n').next().unwrap_or("");
        match line_kind(line).as_deref() {
            Some("trace") => log.traces -= 1,
            Some("stop") => {}
            _ => break,
        }
        keep = body.len() - line.len();
    }
    if keep < text.len() {
        std::fs::write(path, &text[..keep]).map_err(io)?;
    }
    let task = log.header.task.clone();
    let templates = cfg.templates()?;
    env.oracle.check(&task).map_err(RunError::RunnerMissing)?;

    let mut ledger = UsageLedger::default();
    let mut usages: Vec<&[PhaseUsage]> = Vec::new();
    if let Some(s) = &log.seed {
        usages.push(&s.usage);
    }
    usages.extend(log.iterations.iter().map(|i| i.usage.as_slice()));
    for phases in usages {
        for p in phases {
            ledger.record(p.role, &p.usage);
        }
    }
    let writer = LogWriter::append(path)?;
    let mut engine = Engine::new(cfg, task, templates, env, writer, opts, ledger);
    let corrupt = |message: String| LogError::Corrupt { path: path.into(), line: 0, message };
    for rec in log.records() {
        engine.buffer.restore(rec.clone()).map_err(|e| corrupt(format!("cannot rebuild buffer: {e}")))?;
    }
    engine.logged = engine.llm.usage_ledger().clone();
    let stop = match &log.seed {
        None => {
            let seed_code = std::fs::read_to_string(&engine.cfg.seed_code)
                .map_err(|source| RunError::SeedCode { path: engine.cfg.seed_code.clone(), source })?;
            match engine.seed(seed_code)? {
                Some(h) => engine.stop(h, 0)?,
                None => engine.iterate_from(1)?,
            }
        }
        Some(_) => engine.iterate_from(log.iterations.len() as u32 + 1)?,
    };
    let new_lines = engine.writer.lines().to_vec();
    for line in new_lines {
        match line {
            LogLine::Iteration(rec) => log.iterations.push(rec),
            LogLine::Seed(s) => log.seed = Some(s),
            LogLine::Trace(_) => log.traces += 1,
            LogLine::Stop(s) => log.stop = Some(s),
            LogLine::Header(_) => {}
        }
    }
    debug_assert_eq!(log.stop.as_ref(), Some(&stop));
    Ok(RunResult::from_log(log))
}

fn record_all(ledger: &mut UsageLedger, usage: &[PhaseUsage]) {
    for p in usage {
        ledger.record(p.role, &p.usage);
    }
}

fn line_kind(line: &str) -> Option<String> {
    #[derive(serde::Deserialize)]
    struct Kind {
        kind: String,
    }
    serde_json::from_str::<Kind>(line).ok().map(|k| k.kind)
}

/// Why an iteration could not finish.
struct Halt {
    reason: StopReason,
    error: Option<String>,
}

impl Halt {
    fn budget(e: impl ToString) -> Self {
        Halt { reason: StopReason::TokenBudgetExhausted, error: Some(e.to_string()) }
    }

    fn abort(e: impl ToString) -> Self {
        Halt { reason: StopReason::Aborted, error: Some(e.to_string()) }
    }

    fn from_agent(e: AgentError) -> Self {
        if e.is_budget_exhausted() {
            Halt::budget(e)
        } else {
            Halt::abort(e)
        }
    }
}

/// Runs `f` and records the tokens it spent for `role` under `phase`.
fn tracked<T>(
    llm: &mut Llm,
    role: AgentRole,
    phase: &str,
    usage: &mut Vec<PhaseUsage>,
    f: impl FnOnce(&mut Llm) -> T,
) -> T {
    let before = llm.usage_ledger().role(role);
    let out = f(llm);
    let spent = llm.usage_ledger().role(role).since(&before);
    if !spent.is_zero() {
        usage.push(PhaseUsage { phase: phase.into(), role, usage: spent });
    }
    out
}

struct Engine {
    cfg: RunConfig,
    task: TaskSpec,
    metric_names: Vec<String>,
    templates: TemplateSet,
    llm: Llm,
    oracle: Box<dyn Oracle>,
    buffer: EvolveBuffer,
    writer: LogWriter,
    opts: RunOptions,
    traces: Rc<RefCell<Vec<TraceEntry>>>,
    /// Usage already accounted for in written log lines.
    /// Usage already written to the log, per role.
    logged: UsageLedger,
}

impl Engine {
    fn new(
        cfg: RunConfig,
        task: TaskSpec,
        templates: TemplateSet,
        env: RunEnv,
        writer: LogWriter,
        opts: RunOptions,
        ledger: UsageLedger,
    ) -> Self {
        let mut llm = Llm::new(env.provider, cfg.agents.clone())
            .with_budget(cfg.token_budget)
            .with_request_seed(stream_seed(cfg.seed, 0, Purpose::RequestIds));
        llm.resume_from(ledger);
        let traces: Rc<RefCell<Vec<TraceEntry>>> = Rc::default();
        if opts.trace_llm {
            let sink = traces.clone();
            llm.set_tracer(Box::new(move |req, res| {
                let (response, error, latency_ms) = match res {
                    Ok(r) => (Some(r.text.clone()), None, r.latency_ms),
                    Err(e) => (None, Some(e.to_string()), 0),
                };
                sink.borrow_mut().push(TraceEntry {
                    role: req.role,
                    request_id: req.request_id.clone(),
                    model: req.model.clone(),
                    system: req.system.clone(),
                    user: req.user.clone(),
                    response,
                    error,
                    latency_ms,
                });
            }));
        }
        let metric_names = task.metrics.iter().map(|m| m.name.clone()).collect();
        let logged = llm.usage_ledger().clone();
        Engine {
            cfg,
            task,
            metric_names,
            templates,
            llm,
            oracle: env.oracle,
            buffer: EvolveBuffer::new(),
            writer,
            opts,
            traces,
            logged,
        }
    }

    fn uses_summarizer(&self) -> bool {
        self.cfg.strategy == Strategy::Contextevolve && !self.cfg.ablation.disable_summarizer
    }

    fn flush_traces(&mut self) -> Result<(), LogError> {
        let pending: Vec<TraceEntry> = self.traces.borrow_mut().drain(..).collect();
        for t in pending {
            self.writer.write(LogLine::Trace(t))?;
        }
        Ok(())
    }

    fn fallback_text(&self, code: &str) -> String {
        let names: Vec<&str> = self.metric_names.iter().map(String::as_str).collect();
        fallback_abstract(code, &names, self.cfg.abstract_char_limit).text
    }

    /// Abstract for `code`, degrading to the fallback; `Err` only on budget exhaustion.
    fn abstract_for(
        &mut self,
        parent: Option<&str>,
        code: &str,
        usage: &mut Vec<PhaseUsage>,
        flags: &mut Vec<String>,
    ) -> Result<String, Halt> {
        if !self.uses_summarizer() {
            return Ok(self.fallback_text(code));
        }
        let names: Vec<&str> = self.metric_names.iter().map(String::as_str).collect();
        let mode = self.cfg.perturbation.summary_mode;
        let limit = self.cfg.abstract_char_limit;
        let templates = &self.templates;
        let res = tracked(&mut self.llm, AgentRole::Summarizer, "summarize", usage, |llm| {
            Agents::new(llm, templates).summarize(parent, code, &names, mode, limit)
        });
        match res {
            Ok(a) => Ok(a.text),
            Err(e) if e.is_budget_exhausted() => Err(Halt::from_agent(e)),
            Err(AgentError::AbstractUnavailable { fallback, .. }) => {
                flags.push("fallback_abstract".into());
                Ok(fallback.text)
            }
            Err(e) => {
                log::warn!("summarizer failed: {e}");
                flags.push("fallback_abstract".into());
                Ok(self.fallback_text(code))
            }
        }
    }

    fn evaluate(&mut self, code: &str) -> Result<(EvaluationOutcome, bool), Halt> {
        if self.cfg.evaluation_cache {
            if let Some(first) = self.buffer.find_by_hash(code_hash(code)) {
                let status = match first.status {
                    RecordStatus::Ok => Some(crate::evaluator::EvalStatus::Ok),
                    RecordStatus::Failed => Some(crate::evaluator::EvalStatus::Failed),
                    RecordStatus::Timeout => Some(crate::evaluator::EvalStatus::Timeout),
                    RecordStatus::ParseFailed => None,
                };
                if let Some(status) = status {
                    let outcome = EvaluationOutcome {
                        status,
                        metrics: first.metrics.clone(),
                        reported_score: first.reported_score,
                        combined_score: first.combined_score,
                        wall_ms: 0,
                        error: None,
                        stderr: String::new(),
                    };
                    return Ok((outcome, true));
                }
            }
        }
        self.oracle.evaluate(code, &self.task).map(|o| (o, false)).map_err(Halt::abort)
    }

    /// Evaluates and summarizes the seed program as record 0.
    fn seed(&mut self, code: String) -> Result<Option<Halt>, RunError> {
        let mut usage = Vec::new();
        let mut flags = Vec::new();
        let outcome = self.oracle.evaluate(&code, &self.task).map_err(|e| match e {
            EvaluatorError::RunnerMissing { .. } => RunError::RunnerMissing(e),
            e => RunError::Evaluation(e),
        })?;
        let mut halt = None;
        let abstract_text = match self.abstract_for(None, &code, &mut usage, &mut flags) {
            Ok(t) => t,
            Err(h) => {
                flags.push("fallback_abstract".into());
                halt = Some(h);
                self.fallback_text(&code)
            }
        };
        let evaluation = summary(Some(&outcome), false);
        let id = self
            .buffer
            .insert(new_record(None, 0, code, Some(&outcome), abstract_text, flags.clone()))
            .map_err(|e| ConfigError::Invalid(format!("seed record rejected: {e}")))?;
        let record = self.buffer.get(id).expect("just inserted").clone();
        self.flush_traces()?;
        record_all(&mut self.logged, &usage);
        self.writer.write(LogLine::Seed(SeedEntry { record, evaluation, usage, flags }))?;
        if self.opts.progress {
            eprintln!("seed: {} score {}", outcome_word(&self.buffer, id), self.buffer.get(id).map_or(0.0, |r| r.combined_score));
        }
        Ok(halt)
    }

    fn iterate_from(&mut self, first: u32) -> Result<StopEntry, RunError> {
        let last = if self.cfg.strategy == Strategy::OneShot { 1 } else { self.cfg.max_iterations };
        let mut completed = first - 1;
        for t in first..=last {
            match self.iteration(t) {
                Ok(rec) => {
                    self.flush_traces()?;
                    record_all(&mut self.logged, &rec.usage);
                    if self.opts.progress {
                        let best = self.buffer.best_so_far().map_or(0.0, |r| r.combined_score);
                        eprintln!(
                            "iteration {t}/{last}: child #{} {} score {} best {} tokens {}",
                            rec.child_id,
                            rec.status.as_str(),
                            rec.child.combined_score,
                            best,
                            self.logged.total().total_tokens()
                        );
                    }
                    self.writer.write(LogLine::Iteration(rec))?;
                    completed = t;
                }
                Err(h) => {
                    self.flush_traces()?;
                    return self.stop(h, completed);
                }
            }
        }
        self.stop(Halt { reason: StopReason::IterationsExhausted, error: None }, completed)
    }

    fn stop(&mut self, halt: Halt, completed: u32) -> Result<StopEntry, RunError> {
        let now = self.llm.usage_ledger();
        let unlogged: Vec<PhaseUsage> = AgentRole::ALL
            .into_iter()
            .map(|role| PhaseUsage { phase: "unfinished".into(), role, usage: now.role(role).since(&self.logged.role(role)) })
            .filter(|p| !p.usage.is_zero())
            .collect();
        if self.opts.progress {
            eprintln!(
                "stopped: {}{}",
                halt.reason.as_str(),
                halt.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
        }
        let entry = StopEntry {
            reason: halt.reason,
            iterations_completed: completed,
            unlogged_usage: unlogged,
            error: halt.error,
        };
        self.writer.write(LogLine::Stop(entry.clone()))?;
        Ok(entry)
    }

    fn iteration(&mut self, t: u32) -> Result<IterationRecord, Halt> {
        let started = Instant::now();
        let cfg = self.cfg.clone();
        let root = cfg.seed;
        let it = u64::from(t);
        let contextevolve = cfg.strategy == Strategy::Contextevolve;
        let mut phases: Vec<String> = Vec::new();
        let mut usage = Vec::new();
        let mut flags: Vec<String> = Vec::new();

        // 1. parent selection
        let parent: Option<EvolveRecord> = if cfg.strategy == Strategy::OneShot {
            None
        } else {
            phases.push("select_parent".into());
            let picked = match self.buffer.select_parent(&cfg.selection, stream_seed(root, it, Purpose::ParentSelection)) {
                Ok(p) => p.clone(),
                Err(BufferError::EmptyBuffer) => {
                    flags.push("parent_fallback".into());
                    self.buffer.best_so_far().map_err(Halt::abort)?.clone()
                }
                Err(e) => return Err(Halt::abort(e)),
            };
            Some(picked)
        };

        // 2-3. trajectories and guidance
        let mut trajectories = Vec::new();
        let mut guidance: Option<Guidance> = None;
        if contextevolve && !cfg.ablation.disable_navigator {
            phases.push("rollout".into());
            let range = (cfg.trajectory_length[0], cfg.trajectory_length[1]);
            let pool = match self.buffer.rollout_trajectories(range, cfg.rollout_pool, stream_seed(root, it, Purpose::Rollout)) {
                Ok(p) => p,
                Err(BufferError::NoEdges) => Vec::new(),
                Err(e) => return Err(Halt::abort(e)),
            };
            let picked = if pool.is_empty() {
                Vec::new()
            } else {
                sample_by_category(
                    &pool,
                    &cfg.category_weights,
                    cfg.trajectories_per_guidance,
                    stream_seed(root, it, Purpose::CategorySampling),
                )
                .map_err(Halt::abort)?
            };
            if picked.is_empty() {
                flags.push("no_trajectories".into());
            } else {
                let abstract_of = |id: RecordId| self.buffer.get(id).map(|r| r.abstract_text.clone()).unwrap_or_default();
                let samples: Vec<TrajectorySample> = picked
                    .iter()
                    .map(|tr| TrajectorySample {
                        fingerprint: tr.fingerprint(),
                        category: tr.category,
                        steps: tr
                            .steps
                            .iter()
                            .map(|s| StepTriple {
                                parent_abstract: abstract_of(s.parent_record),
                                child_abstract: abstract_of(s.child_record),
                                delta: s.delta,
                            })
                            .collect(),
                    })
                    .collect();
                trajectories = samples.iter().map(|s| s.fingerprint.clone()).collect();
                phases.push("guidance".into());
                let mode = cfg.perturbation.guidance_mode;
                let templates = &self.templates;
                let res = tracked(&mut self.llm, AgentRole::Navigator, "guidance", &mut usage, |llm| {
                    Agents::new(llm, templates).distill_guidance(&samples, mode)
                });
                match res {
                    Ok(g) => guidance = Some(g),
                    Err(e) if e.is_budget_exhausted() => return Err(Halt::from_agent(e)),
                    Err(e) => {
                        log::warn!("iteration {t}: navigator failed: {e}");
                        flags.push("guidance_unavailable".into());
                    }
                }
            }
        }

        // 4. exemplars
        let mut exemplar_ids: Vec<RecordId> = Vec::new();
        if contextevolve {
            phases.push("exemplars".into());
            let parent_ref = parent.as_ref().expect("contextevolve has a parent");
            let digest = self.buffer.digest(cfg.digest_limit, Some(parent_ref.id));
            if !digest.is_empty() {
                if cfg.ablation.disable_sampler {
                    exemplar_ids = top_score_only(&digest, cfg.exemplars).record_ids;
                } else {
                    let templates = &self.templates;
                    let mode = cfg.perturbation.sampler_mode;
                    let res = tracked(&mut self.llm, AgentRole::Sampler, "exemplars", &mut usage, |llm| {
                        Agents::new(llm, templates).curate_exemplars(
                            &digest,
                            &parent_ref.abstract_text,
                            guidance.as_ref(),
                            cfg.exemplars,
                            mode,
                        )
                    });
                    exemplar_ids = match res {
                        Ok(set) => {
                            if set.fallback {
                                flags.push("exemplar_fallback".into());
                            }
                            set.record_ids
                        }
                        Err(e) if e.is_budget_exhausted() => return Err(Halt::from_agent(e)),
                        Err(e) => {
                            log::warn!("iteration {t}: sampler failed: {e}");
                            flags.push("exemplar_fallback".into());
                            top_score_only(&digest, cfg.exemplars).record_ids
                        }
                    };
                }
            }
        }

        // 5. composition
        phases.push("compose".into());
        let params = ComposeParams { excerpt_limit: cfg.excerpt_limit, window_budget: cfg.window_budget_tokens };
        let exemplars: Vec<&EvolveRecord> =
            exemplar_ids.iter().filter_map(|id| self.buffer.get(*id).ok()).collect();
        let history: Vec<&EvolveRecord> = match &parent {
            Some(p) if cfg.strategy == Strategy::RawHistory => {
                let mut h: Vec<&EvolveRecord> =
                    self.buffer.records().iter().rev().filter(|r| r.id != p.id).take(cfg.raw_history_window).collect();
                h.reverse();
                h
            }
            _ => Vec::new(),
        };
        let inputs = match (cfg.strategy, &parent) {
            (Strategy::Contextevolve, Some(p)) => {
                ContextInputs::Contextevolve { parent: p, guidance: guidance.as_ref(), exemplars: &exemplars }
            }
            (Strategy::RawHistory, Some(p)) => ContextInputs::RawHistory { parent: p, history: &history },
            _ => ContextInputs::OneShot,
        };
        let context = compose_context(&self.task.description, inputs, &params).map_err(Halt::abort)?;

        // 6. generation
        phases.push("generate".into());
        let templates = &self.templates;
        let generated = tracked(&mut self.llm, AgentRole::Generator, "generate", &mut usage, |llm| {
            Agents::new(llm, templates).generate(&context)
        });
        let (code, parsed) = match generated {
            Ok(g) => (g.code, true),
            Err(AgentError::ParseFailed { response }) => {
                flags.push("parse_failed".into());
                let code = if response.trim().is_empty() { "(empty response)".to_string() } else { response };
                (code, false)
            }
            Err(e) => return Err(Halt::from_agent(e)),
        };

        // 7. evaluation
        let mut outcome = None;
        let mut cached = false;
        if parsed {
            phases.push("evaluate".into());
            let (o, c) = self.evaluate(&code)?;
            outcome = Some(o);
            cached = c;
        }

        // 8. summarization
        let abstract_text = if parsed {
            phases.push("summarize".into());
            let parent_abstract = parent.as_ref().map(|p| p.abstract_text.clone());
            self.abstract_for(parent_abstract.as_deref(), &code, &mut usage, &mut flags)?
        } else {
            self.fallback_text(&code)
        };

        // 9. buffer update
        phases.push("update".into());
        let parent_id = parent.as_ref().map(|p| p.id);
        let child_id = self
            .buffer
            .insert(new_record(parent_id, t, code, outcome.as_ref(), abstract_text, flags.clone()))
            .map_err(Halt::abort)?;
        let child = self.buffer.get(child_id).expect("just inserted").clone();
        Ok(IterationRecord {
            iteration: t,
            parent_id,
            phases,
            trajectories,
            guidance: guidance.map(|g| g.text),
            exemplar_ids,
            context_tokens: context.token_count,
            child_id,
            status: child.status,
            usage,
            flags,
            evaluation: summary(outcome.as_ref(), cached),
            child,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn outcome_word(buffer: &EvolveBuffer, id: RecordId) -> &'static str {
    buffer.get(id).map_or("missing", |r| r.status.as_str())
}

fn summary(outcome: Option<&EvaluationOutcome>, cached: bool) -> EvaluationSummary {
    match outcome {
        Some(o) => EvaluationSummary {
            status: Some(o.status),
            cached,
            wall_ms: o.wall_ms,
            error: o.error.clone(),
            stderr: o.stderr.clone(),
        },
        None => EvaluationSummary { status: None, cached: false, wall_ms: 0, error: None, stderr: String::new() },
    }
}

fn new_record(
    parent_id: Option<RecordId>,
    iteration: u32,
    code: String,
    outcome: Option<&EvaluationOutcome>,
    abstract_text: String,
    flags: Vec<String>,
) -> NewRecord {
    let status = outcome.map_or(RecordStatus::ParseFailed, |o| o.status.into());
    let mut rec = NewRecord::unscored(parent_id, iteration, code, status);
    if let Some(o) = outcome {
        rec.metrics = o.metrics.clone();
        rec.combined_score = o.combined_score;
        rec.reported_score = o.reported_score;
    }
    rec.abstract_text = abstract_text;
    rec.created_at = now_ms();
    rec.flags = flags;
    rec
}

/// Per-strategy series and summary for runs sharing a task and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub result: RunResult,
}

/// Human-readable label for a configuration's strategy and switches.
pub fn config_label(cfg: &RunConfig) -> String {
    let mut label = cfg.strategy.as_str().to_string();
    let a = cfg.ablation;
    for (on, name) in [
        (a.disable_summarizer, "no_summarizer"),
        (a.disable_navigator, "no_navigator"),
        (a.disable_sampler, "no_sampler"),
    ] {
        if on {
            label.push('-');
            label.push_str(name);
        }
    }
    let p = cfg.perturbation;
    let d = crate::config::Perturbation::default();
    if p.summary_mode != d.summary_mode {
        label.push_str("-novel_only");
    }
    if p.guidance_mode != d.guidance_mode {
        label.push_str("-prescriptive");
    }
    if p.sampler_mode != d.sampler_mode {
        label.push_str("-top_score_only");
    }
    label
}

/// Distinct labels for a list of configs (repeats get `#2`, `#3`, ...).
pub fn unique_labels(cfgs: &[RunConfig]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cfg in cfgs {
        let base = config_label(cfg);
        let mut label = base.clone();
        let mut n = 1;
        while out.contains(&label) {
            n += 1;
            label = format!("{base}#{n}");
        }
        out.push(label);
    }
    out
}

/// Checks that configs share task, seed code and rng seed.
pub fn check_comparable(cfgs: &[RunConfig]) -> Result<(), RunError> {
    if cfgs.len() < 2 {
        return Err(RunError::IncompatibleConfigs("need at least two configs".into()));
    }
    let read = |c: &RunConfig| {
        std::fs::read(&c.seed_code).map_err(|source| RunError::SeedCode { path: c.seed_code.clone(), source })
    };
    let first = &cfgs[0];
    let first_task = first.task_spec()?;
    let first_code = read(first)?;
    for c in &cfgs[1..] {
        let task = c.task_spec()?;
        if task.name != first_task.name || task != first_task {
            return Err(RunError::IncompatibleConfigs(format!("tasks differ: `{}` vs `{}`", first_task.name, task.name)));
        }
        if c.seed != first.seed {
            return Err(RunError::IncompatibleConfigs(format!("rng seeds differ: {} vs {}", first.seed, c.seed)));
        }
        if read(c)? != first_code {
            return Err(RunError::IncompatibleConfigs("seed code differs".into()));
        }
    }
    Ok(())
}

/// Runs every config (concurrently) and returns one row per config.
pub fn compare(cfgs: &[RunConfig], opts: RunOptions) -> Result<Vec<ComparisonRow>, RunError> {
    check_comparable(cfgs)?;
    let labels = unique_labels(cfgs);
    let results: Vec<Result<RunResult, RunError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|cfg| s.spawn(move || run(cfg, &[], opts))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    labels
        .into_iter()
        .zip(results)
        .map(|(label, r)| r.map(|result| ComparisonRow { label, result }))
        .collect()
}
