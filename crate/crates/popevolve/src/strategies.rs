//! The strategy engines. Each takes one problem, a strategy spec, and a
//! transport, and drives prompt/response rounds to a recorded outcome.
//!
//! Engines are deterministic state machines over backend completions: all
//! randomness lives behind the per-request derived seeds, so identical
//! (dataset, spec, params, master seed, sim config) inputs reproduce
//! identical outcomes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::answer::{parse_dser_verdict, parse_genselect_judgment, DserVerdict};
use crate::backend::{BackendError, Completion, GenerationRequest};
use crate::domain::{
    Candidate, EarlyStop, FinishReason, Generation, GenerationParams, Problem, StrategyKind,
    StrategySpec,
};
use crate::metrics::majority_vote;
use crate::prompts::{strip_think, PromptSet};
use crate::record::{Fingerprint, Phase};

pub const DEFAULT_EVOLVE_BUDGET_CHARS: usize = 200_000;

/// Executes batches of requests. The harness implementation also records
/// events and serves resume cache hits; tests plug in plain backends.
/// Completions come back in request order regardless of completion order.
pub trait Transport {
    fn run_batch(
        &mut self,
        requests: Vec<GenerationRequest>,
    ) -> Result<Vec<Completion>, BackendError>;
}

/// Per-run inputs shared by every strategy invocation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub master_seed: u64,
    pub evolve_budget_chars: usize,
    pub prompts: PromptSet,
}

impl Default for RunContext {
    fn default() -> Self {
        Self {
            master_seed: 0,
            evolve_budget_chars: DEFAULT_EVOLVE_BUDGET_CHARS,
            prompts: PromptSet::default(),
        }
    }
}

impl RunContext {
    pub fn with_seed(master_seed: u64) -> Self {
        Self { master_seed, ..Default::default() }
    }
}

/// Counts of each canonical answer in a generation, with nulls tracked
/// separately: null answers never vote but still show up here.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerHistogram {
    pub counts: BTreeMap<String, u32>,
    pub nulls: u32,
}

impl AnswerHistogram {
    pub fn from_answers(answers: &[Option<String>]) -> Self {
        let mut histogram = AnswerHistogram::default();
        for answer in answers {
            match answer {
                Some(a) => *histogram.counts.entry(a.clone()).or_insert(0) += 1,
                None => histogram.nulls += 1,
            }
        }
        histogram
    }
}

/// Compact record of one candidate: the extracted answer and its costs.
/// Full texts stay in the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub answer: Option<String>,
    pub canonical: Option<String>,
    pub finish_reason: FinishReason,
    pub think_malformed: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

impl MemberSummary {
    fn from_candidate(candidate: &Candidate) -> Self {
        Self {
            answer: candidate.answer.clone(),
            canonical: candidate.canonical_answer(),
            finish_reason: candidate.finish_reason,
            think_malformed: candidate.think_malformed,
            prompt_tokens: candidate.usage.prompt_tokens,
            completion_tokens: candidate.usage.completion_tokens,
            wall_time_ms: candidate.wall_time_ms,
        }
    }
}

/// One iteration of one problem: the member summaries plus totals over every
/// request issued for the iteration (for dser that is the verify/correct
/// pair, so totals exceed the single member's own usage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub members: Vec<MemberSummary>,
    pub histogram: AnswerHistogram,
    pub requests: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

impl IterationSummary {
    fn from_generation(generation: &Generation) -> Self {
        let members: Vec<MemberSummary> =
            generation.members.iter().map(MemberSummary::from_candidate).collect();
        let histogram = AnswerHistogram::from_answers(&generation.canonical_answers());
        Self {
            iteration: generation.iteration,
            requests: members.len() as u32,
            prompt_tokens: members.iter().map(|m| m.prompt_tokens).sum(),
            completion_tokens: members.iter().map(|m| m.completion_tokens).sum(),
            wall_time_ms: members.iter().map(|m| m.wall_time_ms).sum(),
            members,
            histogram,
        }
    }

    pub fn canonical_answers(&self) -> Vec<Option<String>> {
        self.members.iter().map(|m| m.canonical.clone()).collect()
    }
}

/// GenSelect's selection rounds: the parsed judgment per round and the cost
/// of the selection requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub rounds: Vec<Option<u32>>,
    pub fallback: bool,
    pub requests: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

/// Everything recorded about one problem after a strategy ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub problem_id: String,
    pub kind: StrategyKind,
    /// Canonical form of the selected answer; `None` when nothing voted.
    pub final_answer: Option<String>,
    /// First iteration at which the generation was unanimous, if any.
    pub converged_at: Option<u32>,
    pub iterations: Vec<IterationSummary>,
    pub verdicts: Vec<DserVerdict>,
    pub selection: Option<SelectionSummary>,
    pub error: Option<String>,
}

impl StrategyOutcome {
    /// Total requests across iterations and selection rounds.
    pub fn request_count(&self) -> u32 {
        self.iterations.iter().map(|i| i.requests).sum::<u32>()
            + self.selection.as_ref().map_or(0, |s| s.requests)
    }
}

/// True iff every member extracted an answer and all canonical forms agree.
pub fn check_unanimity(generation: &Generation) -> bool {
    let answers = generation.canonical_answers();
    match answers.first() {
        Some(Some(first)) => answers.iter().all(|a| a.as_deref() == Some(first.as_str())),
        _ => false,
    }
}

/// Dispatches on the spec's strategy kind.
pub fn run_strategy(
    problem: &Problem,
    spec: &StrategySpec,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<StrategyOutcome, BackendError> {
    match spec.kind {
        StrategyKind::PopulationEvolve => {
            run_population_evolve(problem, spec, params, ctx, transport)
        }
        StrategyKind::Dser => run_dser(problem, spec, params, ctx, transport),
        StrategyKind::GenSelect => run_genselect(problem, spec, params, ctx, transport),
        StrategyKind::Baseline => {
            run_baseline(problem, spec.population_size, params, ctx, transport)
        }
    }
}

fn sample_generation(
    problem: &Problem,
    phase: Phase,
    iteration: u32,
    count: u32,
    prompt: &str,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<Generation, BackendError> {
    let requests: Vec<GenerationRequest> = (0..count)
        .map(|j| {
            GenerationRequest::new(
                ctx.master_seed,
                Fingerprint::new(&problem.id, phase, iteration, j),
                prompt.to_string(),
                params.clone(),
            )
        })
        .collect();
    let completions = transport.run_batch(requests)?;
    let members = completions
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            Candidate::from_raw(j as u32, iteration, c.text, c.usage, c.wall_time_ms, c.finish_reason)
        })
        .collect();
    Ok(Generation::new(iteration, members).expect("members built in index order"))
}

fn single_request(
    problem: &Problem,
    phase: Phase,
    iteration: u32,
    index: u32,
    prompt: String,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<Completion, BackendError> {
    let request = GenerationRequest::new(
        ctx.master_seed,
        Fingerprint::new(&problem.id, phase, iteration, index),
        prompt,
        params.clone(),
    );
    let mut completions = transport.run_batch(vec![request])?;
    Ok(completions.remove(0))
}

fn all_failed(generation: &Generation) -> bool {
    generation.members.iter().all(|m| m.finish_reason == FinishReason::Error)
}

/// P candidates evolve for up to T iterations; every next-generation sample
/// is conditioned on the full think-stripped previous generation, and the
/// final answer is the majority vote over the last generation.
pub fn run_population_evolve(
    problem: &Problem,
    spec: &StrategySpec,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<StrategyOutcome, BackendError> {
    let population = spec.population_size;
    let prompt = ctx.prompts.build_generation_prompt(problem);
    let mut current =
        sample_generation(problem, Phase::Generation, 0, population, &prompt, params, ctx, transport)?;
    let mut iterations = vec![IterationSummary::from_generation(&current)];
    let mut converged_at: Option<u32> = check_unanimity(&current).then_some(0);
    let mut error =
        all_failed(&current).then(|| format!("all {population} members failed at iteration 0"));

    if error.is_none() {
        for i in 1..=spec.max_iterations {
            if spec.early_stop == EarlyStop::Unanimity && converged_at.is_some() {
                break;
            }
            let prompt =
                ctx.prompts.build_evolving_prompt(problem, &current, ctx.evolve_budget_chars);
            let next = sample_generation(
                problem,
                Phase::Evolving,
                i,
                population,
                &prompt,
                params,
                ctx,
                transport,
            )?;
            iterations.push(IterationSummary::from_generation(&next));
            current = next;
            if converged_at.is_none() && check_unanimity(&current) {
                converged_at = Some(i);
            }
            if all_failed(&current) {
                error = Some(format!("all {population} members failed at iteration {i}"));
                break;
            }
        }
    }

    let final_answer =
        if error.is_some() { None } else { majority_vote(&current.canonical_answers()) };
    Ok(StrategyOutcome {
        problem_id: problem.id.clone(),
        kind: StrategyKind::PopulationEvolve,
        final_answer,
        converged_at,
        iterations,
        verdicts: Vec::new(),
        selection: None,
        error,
    })
}

/// A single trajectory refined by alternating verification and correction
/// requests. The loop is unconditional on the verdict; the final refined
/// output is adopted directly.
pub fn run_dser(
    problem: &Problem,
    spec: &StrategySpec,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<StrategyOutcome, BackendError> {
    let prompt = ctx.prompts.build_generation_prompt(problem);
    let initial =
        sample_generation(problem, Phase::Generation, 0, 1, &prompt, params, ctx, transport)?;
    let mut current = initial.members[0].clone();
    let mut iterations = vec![IterationSummary::from_generation(&initial)];
    let mut verdicts: Vec<DserVerdict> = Vec::new();
    let mut error = (current.finish_reason == FinishReason::Error)
        .then(|| "initial generation failed".to_string());

    if error.is_none() {
        for i in 1..=spec.max_iterations {
            if let EarlyStop::VerdictStreak { streak } = spec.early_stop {
                let streak = streak as usize;
                if streak > 0
                    && verdicts.len() >= streak
                    && verdicts[verdicts.len() - streak..]
                        .iter()
                        .all(|v| *v == DserVerdict::Correct)
                {
                    break;
                }
            }

            let verify_prompt = ctx.prompts.build_dser_verify_prompt(&current.solution_text);
            let verify =
                single_request(problem, Phase::Verify, i, 0, verify_prompt, params, ctx, transport)?;
            let report = strip_think(&verify.text).text;
            verdicts.push(parse_dser_verdict(&report));

            let correct_prompt =
                ctx.prompts.build_dser_correct_prompt(&current.solution_text, &report);
            let correct =
                single_request(problem, Phase::Correct, i, 0, correct_prompt, params, ctx, transport)?;
            let next = Candidate::from_raw(
                0,
                i,
                correct.text,
                correct.usage,
                correct.wall_time_ms,
                correct.finish_reason,
            );

            let mut summary = IterationSummary::from_generation(
                &Generation::new(i, vec![next.clone()]).expect("single member"),
            );
            summary.requests = 2;
            summary.prompt_tokens += verify.usage.prompt_tokens;
            summary.completion_tokens += verify.usage.completion_tokens;
            summary.wall_time_ms += verify.wall_time_ms;
            iterations.push(summary);

            let failed = next.finish_reason == FinishReason::Error;
            current = next;
            if failed {
                error = Some(format!("correction request failed at iteration {i}"));
                break;
            }
        }
    }

    let final_answer = if error.is_some() { None } else { current.canonical_answer() };
    Ok(StrategyOutcome {
        problem_id: problem.id.clone(),
        kind: StrategyKind::Dser,
        final_answer,
        converged_at: None,
        iterations,
        verdicts,
        selection: None,
        error,
    })
}

/// P candidates generated once; R selection requests each pick an index from
/// the shared pooled context; majority voting over the answers of validly
/// selected candidates decides. With zero valid selections the vote falls
/// back to the whole initial generation.
pub fn run_genselect(
    problem: &Problem,
    spec: &StrategySpec,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<StrategyOutcome, BackendError> {
    let population = spec.population_size;
    let prompt = ctx.prompts.build_generation_prompt(problem);
    let initial =
        sample_generation(problem, Phase::Generation, 0, population, &prompt, params, ctx, transport)?;
    let iterations = vec![IterationSummary::from_generation(&initial)];

    if all_failed(&initial) {
        return Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            kind: StrategyKind::GenSelect,
            final_answer: None,
            converged_at: None,
            iterations,
            verdicts: Vec::new(),
            selection: None,
            error: Some(format!("all {population} members failed at iteration 0")),
        });
    }

    let selection_prompt = ctx.prompts.build_genselect_prompt(problem, &initial);
    let requests: Vec<GenerationRequest> = (0..spec.selection_rounds)
        .map(|r| {
            GenerationRequest::new(
                ctx.master_seed,
                Fingerprint::new(&problem.id, Phase::Select, 0, r),
                selection_prompt.clone(),
                params.clone(),
            )
        })
        .collect();
    let completions = transport.run_batch(requests)?;

    let max_idx = population as usize - 1;
    let rounds: Vec<Option<u32>> = completions
        .iter()
        .map(|c| {
            let visible = strip_think(&c.text).text;
            parse_genselect_judgment(&visible, max_idx).map(|j| j as u32)
        })
        .collect();

    let selected: Vec<Option<String>> = rounds
        .iter()
        .flatten()
        .map(|&j| initial.members[j as usize].canonical_answer())
        .collect();
    let fallback = selected.is_empty();
    let final_answer = if fallback {
        majority_vote(&initial.canonical_answers())
    } else {
        majority_vote(&selected)
    };

    let selection = SelectionSummary {
        fallback,
        requests: completions.len() as u32,
        prompt_tokens: completions.iter().map(|c| c.usage.prompt_tokens).sum(),
        completion_tokens: completions.iter().map(|c| c.usage.completion_tokens).sum(),
        wall_time_ms: completions.iter().map(|c| c.wall_time_ms).sum(),
        rounds,
    };

    Ok(StrategyOutcome {
        problem_id: problem.id.clone(),
        kind: StrategyKind::GenSelect,
        final_answer,
        converged_at: None,
        iterations,
        verdicts: Vec::new(),
        selection: Some(selection),
        error: None,
    })
}

/// k independent rollouts; the final answer is the majority vote and every
/// candidate's answer is retained for pass@k scoring.
pub fn run_baseline(
    problem: &Problem,
    k: u32,
    params: &GenerationParams,
    ctx: &RunContext,
    transport: &mut dyn Transport,
) -> Result<StrategyOutcome, BackendError> {
    let prompt = ctx.prompts.build_generation_prompt(problem);
    let rollouts =
        sample_generation(problem, Phase::Generation, 0, k, &prompt, params, ctx, transport)?;
    let iterations = vec![IterationSummary::from_generation(&rollouts)];
    let error = all_failed(&rollouts).then(|| format!("all {k} rollouts failed"));
    let final_answer =
        if error.is_some() { None } else { majority_vote(&rollouts.canonical_answers()) };
    Ok(StrategyOutcome {
        problem_id: problem.id.clone(),
        kind: StrategyKind::Baseline,
        final_answer,
        converged_at: check_unanimity(&rollouts).then_some(0),
        iterations,
        verdicts: Vec::new(),
        selection: None,
        error,
    })
}
