//! Run execution and resume.
//!
//! A run walks every problem of the dataset through the configured strategy,
//! streaming request events and per-problem outcomes into the run directory.
//! Problems run on a small worker pool; the log writer serializes their
//! events back into dataset order. Resume reloads the log, replays completed
//! events through the same engines instead of re-requesting them, and
//! appends only what is missing, so a killed and resumed run converges to a
//! byte-identical record (timestamps aside).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::backend::{BackendConfig, ScriptedBackend};
use crate::domain::{validate_config, GenerationParams, StrategySpec};
use crate::harness::dataset::{ingest_dataset, Dataset};
use crate::harness::runlog::{encode_line, LogWriter, RunDir, WriterMsg};
use crate::harness::session::SessionTransport;
use crate::harness::HarnessError;
use crate::metrics::score_outcomes;
use crate::prompts::PromptSet;
use crate::record::{EventLine, RunConfig, RunRecord, SCHEMA_VERSION};
use crate::strategies::{run_strategy, RunContext, StrategyOutcome};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dataset: Dataset,
    /// Where the dataset was read from; stored so resume can reload it.
    pub dataset_path: String,
    pub spec: StrategySpec,
    pub params: GenerationParams,
    pub backend: BackendConfig,
    pub master_seed: u64,
    pub evolve_budget_chars: usize,
    /// Directory of template overrides; `None` uses the built-in prompts.
    pub prompts_dir: Option<PathBuf>,
    /// Problems processed concurrently.
    pub jobs: usize,
}

/// `summary.json`: the per-run rollup, fully recomputable from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub run_id: String,
    pub strategy: StrategySpec,
    pub dataset_name: String,
    pub dataset_sha256: String,
    pub master_seed: u64,
    pub backend: String,
    pub problems: usize,
    pub completed: usize,
    pub errored: Vec<String>,
    pub accuracy_pct: Option<f64>,
    pub scored_problems: usize,
    pub skipped_no_reference: Vec<String>,
    pub converged: usize,
    pub mean_converged_iteration: Option<f64>,
    pub total_requests: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub total_wall_time_ms: u64,
    pub final_answers: BTreeMap<String, Option<String>>,
}

/// Starts a fresh run in `out_dir`. Refuses a directory that already holds
/// an event log; that is what `resume` is for.
pub fn execute_run(options: &RunOptions, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    validate_config(&options.spec, &options.params).map_err(HarnessError::InvalidConfig)?;
    let run_dir = RunDir::new(out_dir);
    if run_dir.events_path().exists() {
        return Err(HarnessError::Refused(format!(
            "{} already holds an event log; use resume",
            out_dir.display()
        )));
    }

    let mut config = RunConfig {
        schema_version: SCHEMA_VERSION,
        run_id: String::new(),
        dataset_name: options.dataset.name.clone(),
        dataset_path: options.dataset_path.clone(),
        dataset_sha256: options.dataset.sha256.clone(),
        strategy: options.spec.clone(),
        params: options.params.clone(),
        master_seed: options.master_seed,
        backend: options.backend.clone(),
        evolve_budget_chars: options.evolve_budget_chars,
    };
    config.run_id = config.compute_run_id();
    run_dir.write_config(&config)?;

    let prompts = load_prompts(options.prompts_dir.as_deref())?;
    let outcomes = run_problems(
        &run_dir,
        &config,
        &options.dataset,
        prompts,
        Vec::new(),
        Vec::new(),
        options.jobs,
    )?;
    write_summary(&run_dir, &config, &options.dataset, &outcomes)
}

/// Resumes the run recorded in `out_dir`. Completed problems and completed
/// iterations are never re-requested: their recorded completions replay
/// through the strategy engines instead.
pub fn resume_run(
    out_dir: &Path,
    dataset_path_override: Option<&Path>,
    prompts_dir: Option<&Path>,
    jobs: usize,
) -> Result<RunSummary, HarnessError> {
    let run_dir = RunDir::new(out_dir);
    let config = run_dir.read_config()?;

    let dataset_path = dataset_path_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.dataset_path));
    let dataset = ingest_dataset(&dataset_path)?;
    if dataset.sha256 != config.dataset_sha256 {
        return Err(HarnessError::Refused(format!(
            "dataset fingerprint mismatch: run was recorded against {}, {} hashes to {}",
            config.dataset_sha256,
            dataset_path.display(),
            dataset.sha256
        )));
    }

    let loaded = run_dir.load_events()?;
    if let Some(warning) = &loaded.tail_warning {
        log::warn!("{warning}");
        run_dir.truncate_events(loaded.valid_bytes)?;
    }

    let prompts = load_prompts(prompts_dir)?;
    let outcomes = run_problems(
        &run_dir,
        &config,
        &dataset,
        prompts,
        loaded.events,
        loaded.outcomes,
        jobs,
    )?;
    write_summary(&run_dir, &config, &dataset, &outcomes)
}

/// Loads a completed or partial run back into memory.
pub fn load_run(out_dir: &Path) -> Result<RunRecord, HarnessError> {
    let run_dir = RunDir::new(out_dir);
    let config = run_dir.read_config()?;
    let loaded = run_dir.load_events()?;
    if let Some(warning) = &loaded.tail_warning {
        log::warn!("{warning}");
    }
    Ok(RunRecord { config, events: loaded.events, outcomes: loaded.outcomes })
}

fn load_prompts(dir: Option<&Path>) -> Result<PromptSet, HarnessError> {
    match dir {
        Some(dir) => Ok(PromptSet::from_dir(dir)?),
        None => Ok(PromptSet::default()),
    }
}

fn run_problems(
    run_dir: &RunDir,
    config: &RunConfig,
    dataset: &Dataset,
    prompts: PromptSet,
    recorded_events: Vec<crate::record::RequestEvent>,
    existing_outcomes: Vec<StrategyOutcome>,
    jobs: usize,
) -> Result<Vec<StrategyOutcome>, HarnessError> {
    let backend = config.backend.build(&dataset.problems)?;
    let ctx = RunContext {
        master_seed: config.master_seed,
        evolve_budget_chars: config.evolve_budget_chars,
        prompts,
    };
    let replay = (!recorded_events.is_empty()).then(|| ScriptedBackend::from_events(&recorded_events));

    let done_ids: HashMap<&str, &StrategyOutcome> =
        existing_outcomes.iter().map(|o| (o.problem_id.as_str(), o)).collect();
    let pre_done: HashSet<usize> = dataset
        .problems
        .iter()
        .enumerate()
        .filter(|(_, p)| done_ids.contains_key(p.id.as_str()))
        .map(|(i, _)| i)
        .collect();
    let todo: Vec<usize> = (0..dataset.problems.len()).filter(|i| !pre_done.contains(i)).collect();

    let writer = LogWriter::spawn(run_dir.events_path(), pre_done)?;
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fresh: Mutex<Vec<StrategyOutcome>> = Mutex::new(Vec::new());
    let workers = jobs.max(1).min(todo.len().max(1));

    let worker_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = writer.tx.clone();
            scope.spawn(|| {
                let tx = tx;
                loop {
                    if abort.load(Ordering::SeqCst) {
                        return;
                    }
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&problem_idx) = todo.get(slot) else {
                        return;
                    };
                    let problem = &dataset.problems[problem_idx];
                    let mut transport = SessionTransport::new(
                        backend.as_ref(),
                        replay.as_ref(),
                        Some((problem_idx, tx.clone())),
                    );
                    let result = run_strategy(problem, &config.strategy, &config.params, &ctx, &mut transport)
                        .map_err(HarnessError::from)
                        .and_then(|outcome| {
                            let line = encode_line(&EventLine::outcome(outcome.clone()))?;
                            tx.send(WriterMsg::Line { problem_idx, line }).map_err(|_| {
                                HarnessError::Corrupt("run log writer closed".into())
                            })?;
                            tx.send(WriterMsg::Done { problem_idx }).map_err(|_| {
                                HarnessError::Corrupt("run log writer closed".into())
                            })?;
                            Ok(outcome)
                        });
                    match result {
                        Ok(outcome) => fresh.lock().expect("poisoned").push(outcome),
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            worker_error.lock().expect("poisoned").get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });

    writer.finish()?;
    if let Some(error) = worker_error.into_inner().expect("poisoned") {
        return Err(error);
    }

    // Dataset order: existing outcomes plus fresh ones, by problem position.
    let fresh = fresh.into_inner().expect("poisoned");
    let by_id: HashMap<&str, &StrategyOutcome> = existing_outcomes
        .iter()
        .chain(fresh.iter())
        .map(|o| (o.problem_id.as_str(), o))
        .collect();
    Ok(dataset
        .problems
        .iter()
        .filter_map(|p| by_id.get(p.id.as_str()).map(|o| (*o).clone()))
        .collect())
}

fn write_summary(
    run_dir: &RunDir,
    config: &RunConfig,
    dataset: &Dataset,
    outcomes: &[StrategyOutcome],
) -> Result<RunSummary, HarnessError> {
    let score = score_outcomes(outcomes, dataset);
    let converged: Vec<u32> = outcomes.iter().filter_map(|o| o.converged_at).collect();
    let total_requests: u64 = outcomes.iter().map(|o| u64::from(o.request_count())).sum();
    let mut total_prompt_tokens = 0u64;
    let mut total_completion_tokens = 0u64;
    let mut total_wall_time_ms = 0u64;
    for outcome in outcomes {
        for iteration in &outcome.iterations {
            total_prompt_tokens += iteration.prompt_tokens;
            total_completion_tokens += iteration.completion_tokens;
            total_wall_time_ms += iteration.wall_time_ms;
        }
        if let Some(selection) = &outcome.selection {
            total_prompt_tokens += selection.prompt_tokens;
            total_completion_tokens += selection.completion_tokens;
            total_wall_time_ms += selection.wall_time_ms;
        }
    }

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        run_id: config.run_id.clone(),
        strategy: config.strategy.clone(),
        dataset_name: dataset.name.clone(),
        dataset_sha256: dataset.sha256.clone(),
        master_seed: config.master_seed,
        backend: config.backend.label().to_string(),
        problems: dataset.problems.len(),
        completed: outcomes.len(),
        errored: outcomes
            .iter()
            .filter(|o| o.error.is_some())
            .map(|o| o.problem_id.clone())
            .collect(),
        accuracy_pct: (score.scored_problems > 0).then(|| score.accuracy_pct()),
        scored_problems: score.scored_problems,
        skipped_no_reference: score.skipped_no_reference,
        converged: converged.len(),
        mean_converged_iteration: (!converged.is_empty()).then(|| {
            converged.iter().map(|&c| f64::from(c)).sum::<f64>() / converged.len() as f64
        }),
        total_requests,
        total_prompt_tokens,
        total_completion_tokens,
        total_wall_time_ms,
        final_answers: outcomes
            .iter()
            .map(|o| (o.problem_id.clone(), o.final_answer.clone()))
            .collect(),
    };
    std::fs::write(run_dir.summary_path(), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
