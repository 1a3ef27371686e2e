//! A deterministic simulated model. Responses are a pure function of
//! (config, derived seed, prompt): never of wall clock, scheduling, or call
//! order. Wall times and token counts are synthetic so whole run records
//! replay byte-for-byte.
//!
//! The sim classifies each prompt by the template it was built from,
//! recovers the problem statement (directly from generation/evolving/select
//! prompts, or from the `Problem:` line its own earlier solutions embed),
//! looks up the per-problem truth answer, and then rolls the configured
//! behavior probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use crate::answer::{answers_equal, canonicalize, extract_boxed};
use crate::backend::{whitespace_tokens, Backend, BackendError, Completion, GenerationRequest};
use crate::domain::{FinishReason, Problem, TokenUsage};
use crate::metrics::majority_vote;

/// Behavior knobs for the simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModelConfig {
    /// Probability an initial generation lands on the truth answer.
    #[serde(default = "default_p0")]
    pub p0: f64,
    /// Consensus bias: probability an evolving response copies the mode of
    /// the embedded answers.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Insight probability: evolving responses land on the truth instead.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Verifier accuracy: verify verdicts and selection judgments are right
    /// with this probability.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Correction strength: probability a correction response lands on the
    /// truth rather than keeping the prior answer.
    #[serde(default = "default_gamma_c")]
    pub gamma_c: f64,
    /// Weighted wrong-answer pool drawn from when a response misses.
    #[serde(default = "default_pool")]
    pub wrong_pool: Vec<PoolEntry>,
    /// Per-problem truth overrides by problem id; reference answers from the
    /// dataset fill the rest.
    #[serde(default)]
    pub truths: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub answer: String,
    pub weight: f64,
}

fn default_p0() -> f64 {
    0.4
}
fn default_beta() -> f64 {
    0.85
}
fn default_gamma() -> f64 {
    0.05
}
fn default_tau() -> f64 {
    0.9
}
fn default_gamma_c() -> f64 {
    0.5
}
fn default_pool() -> Vec<PoolEntry> {
    ["17", "29", "41"]
        .iter()
        .map(|a| PoolEntry { answer: a.to_string(), weight: 1.0 })
        .collect()
}

impl Default for SimModelConfig {
    fn default() -> Self {
        Self {
            p0: default_p0(),
            beta: default_beta(),
            gamma: default_gamma(),
            tau: default_tau(),
            gamma_c: default_gamma_c(),
            wrong_pool: default_pool(),
            truths: BTreeMap::new(),
        }
    }
}

impl SimModelConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let probs = [
            ("p0", self.p0),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("gamma_c", self.gamma_c),
        ];
        for (name, value) in probs {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(BackendError::Config(format!("sim {name} must be in [0, 1]")));
            }
        }
        if self.beta + self.gamma > 1.0 {
            return Err(BackendError::Config("sim beta + gamma must be <= 1".into()));
        }
        if self.wrong_pool.is_empty() {
            return Err(BackendError::Config("sim wrong_pool must be non-empty".into()));
        }
        for entry in &self.wrong_pool {
            if !entry.weight.is_finite() || entry.weight <= 0.0 {
                return Err(BackendError::Config(format!(
                    "sim pool weight for {:?} must be positive",
                    entry.answer
                )));
            }
        }
        Ok(())
    }
}

enum PromptShape {
    Generation,
    Evolving,
    Verify,
    Correct,
    Select,
}

fn classify(prompt: &str) -> Option<PromptShape> {
    if prompt.starts_with("Please think step by step") {
        return Some(PromptShape::Generation);
    }
    if prompt.starts_with("Verify the given solution") {
        return Some(PromptShape::Verify);
    }
    if prompt.starts_with("Given your previous solution") {
        return Some(PromptShape::Correct);
    }
    if prompt.starts_with("You will be given a challenging math problem") {
        if prompt.contains("generate a detailed new solution") {
            return Some(PromptShape::Evolving);
        }
        if prompt.contains("Judgment: [IDX]") {
            return Some(PromptShape::Select);
        }
    }
    None
}

static SECTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^--- Solution (\d+) ---$").unwrap());

/// Bodies of the `--- Solution j ---` sections, in order of appearance.
fn solution_bodies(prompt: &str) -> Vec<String> {
    let header_spans: Vec<(usize, usize)> =
        SECTION_RE.find_iter(prompt).map(|m| (m.start(), m.end())).collect();
    let tail = ["\n\nYour final response should include:", "\n\nEvaluation Process:"]
        .iter()
        .filter_map(|marker| prompt.find(marker))
        .min()
        .unwrap_or(prompt.len());
    header_spans
        .iter()
        .enumerate()
        .map(|(i, (_, body_start))| {
            let end = header_spans
                .get(i + 1)
                .map(|(next_start, _)| *next_start)
                .unwrap_or(tail)
                .min(prompt.len());
            let body = &prompt[(*body_start).min(end)..end];
            body.trim_matches('\n').to_string()
        })
        .collect()
}

fn statement_from_generation(prompt: &str) -> Option<&str> {
    prompt.split_once("Question:\n").map(|(_, rest)| rest)
}

fn statement_from_scaffold(prompt: &str) -> Option<&str> {
    let (_, rest) = prompt.split_once("Problem: ")?;
    rest.split_once("\n\nSolutions:").map(|(stmt, _)| stmt)
}

/// The `Problem:` line a sim-generated solution carries, used to tie
/// verify/correct prompts (which embed only the solution) back to a problem.
fn statement_from_marker(solution: &str) -> Option<&str> {
    let (_, rest) = solution.split_once("Problem: ")?;
    Some(rest.lines().next().unwrap_or(rest))
}

fn collapse(statement: &str) -> String {
    statement.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub struct SimBackend {
    config: SimModelConfig,
    truth_by_statement: HashMap<String, String>,
}

impl SimBackend {
    pub fn new(config: SimModelConfig, problems: &[Problem]) -> Result<Self, BackendError> {
        config.validate()?;
        let mut truth_by_statement = HashMap::new();
        for problem in problems {
            let truth = config
                .truths
                .get(&problem.id)
                .cloned()
                .or_else(|| problem.reference_answer.clone())
                .unwrap_or_else(|| synthesized_truth(&collapse(&problem.statement)));
            truth_by_statement.insert(collapse(&problem.statement), truth);
        }
        Ok(Self { config, truth_by_statement })
    }

    fn truth_of(&self, collapsed_statement: &str) -> String {
        self.truth_by_statement
            .get(collapsed_statement)
            .cloned()
            .unwrap_or_else(|| synthesized_truth(collapsed_statement))
    }

    fn pool_draw(&self, rng: &mut ChaCha8Rng) -> String {
        let total: f64 = self.config.wrong_pool.iter().map(|e| e.weight).sum();
        let mut x = rng.gen::<f64>() * total;
        for entry in &self.config.wrong_pool {
            x -= entry.weight;
            if x <= 0.0 {
                return entry.answer.clone();
            }
        }
        self.config.wrong_pool.last().expect("pool non-empty").answer.clone()
    }

    /// Deterministic response for one prompt. Exposed for direct testing of
    /// the behavior probabilities.
    pub fn respond(&self, prompt: &str, seed: u64, max_new_tokens: u32) -> Completion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = match classify(prompt) {
            Some(PromptShape::Generation) => {
                let Some(statement) = statement_from_generation(prompt) else {
                    return unclassifiable(prompt, "generation prompt without a question");
                };
                let collapsed = collapse(statement);
                let truth = self.truth_of(&collapsed);
                let ans =
                    if rng.gen::<f64>() < self.config.p0 { truth } else { self.pool_draw(&mut rng) };
                solution_text(seed, &collapsed, &ans, "initial derivation")
            }
            Some(PromptShape::Evolving) => {
                let Some(statement) = statement_from_scaffold(prompt) else {
                    return unclassifiable(prompt, "evolving prompt without a problem line");
                };
                let collapsed = collapse(statement);
                let truth = self.truth_of(&collapsed);
                let embedded: Vec<Option<String>> = solution_bodies(prompt)
                    .iter()
                    .map(|body| {
                        extract_boxed(body).map(|s| canonicalize(&s).canonical_string)
                    })
                    .collect();
                let mode = majority_vote(&embedded);
                let roll = rng.gen::<f64>();
                let ans = if roll < self.config.beta {
                    match mode {
                        Some(m) => m,
                        None => self.pool_draw(&mut rng),
                    }
                } else if roll < self.config.beta + self.config.gamma {
                    truth
                } else {
                    self.pool_draw(&mut rng)
                };
                solution_text(seed, &collapsed, &ans, "synthesis over the prior population")
            }
            Some(PromptShape::Verify) => {
                let solution = prompt.split_once("\n\nSolution:\n").map(|(_, s)| s).unwrap_or("");
                let truth = statement_from_marker(solution).map(|s| self.truth_of(&collapse(s)));
                let claimed = extract_boxed(solution);
                let is_correct = match (&claimed, &truth) {
                    (Some(c), Some(t)) => answers_equal(c, t),
                    _ => false,
                };
                let verdict = if rng.gen::<f64>() < self.config.tau { is_correct } else { !is_correct };
                verify_text(seed, verdict)
            }
            Some(PromptShape::Correct) => {
                let previous = prompt
                    .split_once("Previous solution:\n")
                    .map(|(_, rest)| rest)
                    .and_then(|rest| rest.split_once("\n\nVerification report:\n"))
                    .map(|(solution, _)| solution)
                    .unwrap_or("");
                let collapsed = statement_from_marker(previous).map(collapse);
                let prior = extract_boxed(previous);
                let truth = collapsed.as_deref().map(|c| self.truth_of(c));
                let ans = match (truth, prior) {
                    (Some(t), Some(prior)) => {
                        if rng.gen::<f64>() < self.config.gamma_c {
                            t
                        } else {
                            prior
                        }
                    }
                    (Some(t), None) => {
                        if rng.gen::<f64>() < self.config.gamma_c {
                            t
                        } else {
                            self.pool_draw(&mut rng)
                        }
                    }
                    (None, Some(prior)) => prior,
                    (None, None) => self.pool_draw(&mut rng),
                };
                let marker = collapsed.unwrap_or_else(|| "(unknown)".to_string());
                solution_text(seed, &marker, &ans, "reworked derivation")
            }
            Some(PromptShape::Select) => {
                let Some(statement) = statement_from_scaffold(prompt) else {
                    return unclassifiable(prompt, "selection prompt without a problem line");
                };
                let truth = self.truth_of(&collapse(statement));
                let bodies = solution_bodies(prompt);
                if bodies.is_empty() {
                    return unclassifiable(prompt, "selection prompt without candidates");
                }
                let correct_indices: Vec<usize> = bodies
                    .iter()
                    .enumerate()
                    .filter_map(|(j, body)| {
                        extract_boxed(body)
                            .is_some_and(|a| answers_equal(&a, &truth))
                            .then_some(j)
                    })
                    .collect();
                let pick_correct = rng.gen::<f64>() < self.config.tau;
                let j = if pick_correct && !correct_indices.is_empty() {
                    correct_indices[rng.gen_range(0..correct_indices.len())]
                } else {
                    rng.gen_range(0..bodies.len())
                };
                select_text(seed, j)
            }
            None => return unclassifiable(prompt, "prompt shape not recognized"),
        };

        let (text, finish_reason) = enforce_token_cap(text, max_new_tokens);
        let completion_tokens = whitespace_tokens(&text);
        let prompt_tokens = whitespace_tokens(prompt);
        Completion {
            text,
            usage: TokenUsage::new(prompt_tokens, completion_tokens),
            wall_time_ms: synthetic_wall_time(prompt_tokens, completion_tokens),
            finish_reason,
        }
    }
}

impl Backend for SimBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        Ok(self.respond(&request.prompt, request.seed, request.params.max_new_tokens))
    }

    fn name(&self) -> &'static str {
        "sim"
    }
}

fn synthesized_truth(collapsed_statement: &str) -> String {
    let digest = crate::record::sha256_hex(collapsed_statement.as_bytes());
    let n = u64::from_str_radix(&digest[..8], 16).unwrap_or(0) % 1000;
    n.to_string()
}

/// Synthetic latency: flat overhead plus per-token costs. Integer math so
/// ledger sums are order-independent.
fn synthetic_wall_time(prompt_tokens: u64, completion_tokens: u64) -> u64 {
    2 + completion_tokens + prompt_tokens / 64
}

fn enforce_token_cap(text: String, max_new_tokens: u32) -> (String, FinishReason) {
    let mut count: u32 = 0;
    let mut in_token = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            count += 1;
            if count > max_new_tokens {
                return (text[..i].to_string(), FinishReason::Length);
            }
        }
    }
    (text, FinishReason::Stop)
}

fn unclassifiable(prompt: &str, reason: &str) -> Completion {
    Completion::error(
        format!("sim backend could not play this prompt: {reason}"),
        synthetic_wall_time(whitespace_tokens(prompt), 0),
    )
}

fn solution_text(seed: u64, collapsed_statement: &str, ans: &str, note: &str) -> String {
    format!(
        "<think>\nSimulated reasoning trace (seed {seed}); {note} considered and checked.\n</think>\nProblem: {collapsed_statement}\n\nWorking from the given conditions, the intermediate quantities collapse to one consistent value.\n\nFinal answer: \\boxed{{{ans}}}"
    )
}

fn verify_text(seed: u64, verdict: bool) -> String {
    let token = if verdict { "correct" } else { "incorrect" };
    format!(
        "<think>\nSimulated verification pass (seed {seed}).\n</think>\nThe solution was checked step by step; the final value was re-derived and compared against the expected result.\n\n\\boxed{{{token}}}"
    )
}

fn select_text(seed: u64, index: usize) -> String {
    format!(
        "<think>\nSimulated selection pass (seed {seed}).\n</think>\nGrouped the candidates by final answer and compared the internally consistent ones.\n\nJudgment: [{index}]"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Problem;
    use crate::prompts::PromptSet;

    fn problem() -> Problem {
        Problem::new("p1", "What is 6*7?", Some("42".into())).unwrap()
    }

    fn backend(config: SimModelConfig) -> SimBackend {
        SimBackend::new(config, &[problem()]).unwrap()
    }

    fn generation_prompt() -> String {
        PromptSet::default().build_generation_prompt(&problem())
    }

    fn evolving_prompt_with(answers: &[&str]) -> String {
        let members = answers
            .iter()
            .enumerate()
            .map(|(j, a)| {
                crate::domain::Candidate::from_raw(
                    j as u32,
                    0,
                    format!("Problem: What is 6*7?\n\nFinal answer: \\boxed{{{a}}}"),
                    TokenUsage::default(),
                    0,
                    FinishReason::Stop,
                )
            })
            .collect();
        let generation = crate::domain::Generation::new(0, members).unwrap();
        PromptSet::default().build_evolving_prompt(&problem(), &generation, 1_000_000)
    }

    #[test]
    fn same_seed_and_prompt_give_identical_completions() {
        let b = backend(SimModelConfig::default());
        let prompt = generation_prompt();
        let a = b.respond(&prompt, 7, 57_600);
        let c = b.respond(&prompt, 7, 57_600);
        assert_eq!(a, c);
    }

    #[test]
    fn degenerate_p0_always_boxes_the_truth() {
        let b = backend(SimModelConfig { p0: 1.0, ..Default::default() });
        let prompt = generation_prompt();
        for seed in 0..50 {
            let completion = b.respond(&prompt, seed, 57_600);
            assert_eq!(extract_boxed(&completion.text).as_deref(), Some("42"));
        }
    }

    #[test]
    fn evolving_with_dominant_consensus_copies_the_mode() {
        // Mode of {7, 7, 7, 5} is 7; with beta = 1 the response must box it.
        let b = backend(SimModelConfig { beta: 1.0, gamma: 0.0, ..Default::default() });
        let prompt = evolving_prompt_with(&["7", "7", "7", "5"]);
        for seed in 0..20 {
            let completion = b.respond(&prompt, seed, 57_600);
            assert_eq!(extract_boxed(&completion.text).as_deref(), Some("7"));
        }
    }

    #[test]
    fn perfect_verifier_flags_a_wrong_answer() {
        let b = backend(SimModelConfig { tau: 1.0, ..Default::default() });
        let solution = "Problem: What is 6*7?\n\nFinal answer: \\boxed{41}";
        let prompt = PromptSet::default().build_dser_verify_prompt(solution);
        let completion = b.respond(&prompt, 3, 57_600);
        assert_eq!(
            crate::answer::parse_dser_verdict(&completion.text),
            crate::answer::DserVerdict::Incorrect
        );

        let right = "Problem: What is 6*7?\n\nFinal answer: \\boxed{42}";
        let prompt = PromptSet::default().build_dser_verify_prompt(right);
        let completion = b.respond(&prompt, 3, 57_600);
        assert_eq!(
            crate::answer::parse_dser_verdict(&completion.text),
            crate::answer::DserVerdict::Correct
        );
    }

    #[test]
    fn unclassifiable_prompt_yields_error_completion() {
        let b = backend(SimModelConfig::default());
        let completion = b.respond("tell me a joke", 0, 57_600);
        assert_eq!(completion.finish_reason, FinishReason::Error);
    }

    #[test]
    fn token_cap_truncates_and_flags_length() {
        let b = backend(SimModelConfig::default());
        let completion = b.respond(&generation_prompt(), 0, 5);
        assert_eq!(completion.finish_reason, FinishReason::Length);
        assert!(completion.usage.completion_tokens <= 5);
    }

    #[test]
    fn equal_weight_pool_draw_is_near_uniform_over_many_seeds() {
        // beta = gamma = 0 forces the pool branch on every evolving call.
        let config = SimModelConfig {
            beta: 0.0,
            gamma: 0.0,
            wrong_pool: vec![
                PoolEntry { answer: "3".into(), weight: 1.0 },
                PoolEntry { answer: "5".into(), weight: 1.0 },
            ],
            ..Default::default()
        };
        let b = backend(config);
        let prompt = evolving_prompt_with(&["3", "5"]);
        let mut threes = 0u32;
        for seed in 0..10_000 {
            let completion = b.respond(&prompt, seed, 57_600);
            if extract_boxed(&completion.text).as_deref() == Some("3") {
                threes += 1;
            }
        }
        let frequency = f64::from(threes) / 10_000.0;
        assert!((frequency - 0.5).abs() < 0.02, "frequency = {frequency}");
    }

    #[test]
    fn config_validation_catches_bad_probabilities() {
        assert!(SimModelConfig { p0: 1.5, ..Default::default() }.validate().is_err());
        assert!(SimModelConfig { beta: 0.7, gamma: 0.4, ..Default::default() }
            .validate()
            .is_err());
        assert!(SimModelConfig { wrong_pool: vec![], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn section_bodies_stop_at_the_template_tail() {
        let prompt = evolving_prompt_with(&["9", "8"]);
        let bodies = solution_bodies(&prompt);
        assert_eq!(bodies.len(), 2);
        assert!(bodies[1].ends_with("\\boxed{8}"), "{:?}", bodies[1]);
    }
}
