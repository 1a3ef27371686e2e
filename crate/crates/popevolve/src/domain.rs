//! Shared domain types: problems, sampling parameters, strategy
//! configuration, candidates, and generations.
//!
//! All types here are immutable values after construction and safe to share
//! read-only across threads.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign};

use crate::answer;
use crate::prompts;

/// One benchmark question with an optional reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    #[serde(default)]
    pub reference_answer: Option<String>,
}

impl Problem {
    pub fn new(
        id: impl Into<String>,
        statement: impl Into<String>,
        reference_answer: Option<String>,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        let statement = statement.into();
        if id.trim().is_empty() {
            return Err(DomainError::InvalidProblem("id must be non-empty".into()));
        }
        if statement.trim().is_empty() {
            return Err(DomainError::InvalidProblem(format!(
                "problem {id}: statement must be non-empty"
            )));
        }
        Ok(Self { id, statement, reference_answer })
    }
}

/// Sampling parameters forwarded with every generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.6, max_new_tokens: 57_600, seed: None }
    }
}

/// Strategy family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    PopulationEvolve,
    Dser,
    GenSelect,
    Baseline,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyKind::PopulationEvolve => "population_evolve",
            StrategyKind::Dser => "dser",
            StrategyKind::GenSelect => "genselect",
            StrategyKind::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "population_evolve" | "pe" => Ok(StrategyKind::PopulationEvolve),
            "dser" => Ok(StrategyKind::Dser),
            "genselect" | "gen_select" => Ok(StrategyKind::GenSelect),
            "baseline" | "maj" => Ok(StrategyKind::Baseline),
            other => Err(DomainError::InvalidProblem(format!(
                "unknown strategy kind '{other}'"
            ))),
        }
    }
}

/// Optional loop-shortening policy, checked after an iteration completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    /// Run the full iteration budget.
    #[default]
    None,
    /// Stop once every member of the current generation extracts the same
    /// non-null canonical answer.
    Unanimity,
    /// Stop once the last `streak` verification verdicts were all "correct".
    VerdictStreak { streak: u32 },
}

impl std::str::FromStr for EarlyStop {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        if lower == "none" {
            return Ok(EarlyStop::None);
        }
        if lower == "unanimity" {
            return Ok(EarlyStop::Unanimity);
        }
        if let Some(n) = lower.strip_prefix("verdict_streak=") {
            let streak: u32 = n.parse().map_err(|_| {
                DomainError::InvalidProblem(format!("bad verdict_streak value '{n}'"))
            })?;
            return Ok(EarlyStop::VerdictStreak { streak });
        }
        Err(DomainError::InvalidProblem(format!(
            "unknown early-stop policy '{s}' (expected none, unanimity, or verdict_streak=N)"
        )))
    }
}

/// The full strategy tuple: kind, population size P, iteration budget T,
/// selection rounds R, and the early-stop policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub population_size: u32,
    pub max_iterations: u32,
    #[serde(default = "default_selection_rounds")]
    pub selection_rounds: u32,
    #[serde(default)]
    pub early_stop: EarlyStop,
}

fn default_selection_rounds() -> u32 {
    32
}

impl StrategySpec {
    pub fn population_evolve(population_size: u32, max_iterations: u32) -> Self {
        Self {
            kind: StrategyKind::PopulationEvolve,
            population_size,
            max_iterations,
            selection_rounds: default_selection_rounds(),
            early_stop: EarlyStop::None,
        }
    }

    pub fn dser(max_iterations: u32) -> Self {
        Self {
            kind: StrategyKind::Dser,
            population_size: 1,
            max_iterations,
            selection_rounds: default_selection_rounds(),
            early_stop: EarlyStop::None,
        }
    }

    pub fn genselect(population_size: u32, selection_rounds: u32) -> Self {
        Self {
            kind: StrategyKind::GenSelect,
            population_size,
            max_iterations: 0,
            selection_rounds,
            early_stop: EarlyStop::None,
        }
    }

    pub fn baseline(k: u32) -> Self {
        Self {
            kind: StrategyKind::Baseline,
            population_size: k,
            max_iterations: 0,
            selection_rounds: default_selection_rounds(),
            early_stop: EarlyStop::None,
        }
    }
}

/// Prompt/completion token counts as reported by the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

/// Why a completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// One model output: raw text, the think-stripped body, and the extracted
/// boxed answer, plus its cost ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub member_index: u32,
    pub iteration: u32,
    pub raw_text: String,
    pub solution_text: String,
    pub answer: Option<String>,
    pub usage: TokenUsage,
    pub wall_time_ms: u64,
    pub finish_reason: FinishReason,
    /// Raw text held an unclosed `<think>` tag; the body was truncated away.
    pub think_malformed: bool,
}

impl Candidate {
    /// Builds a candidate from raw model output. `solution_text` and
    /// `answer` are always derived from `raw_text` here, never set directly.
    pub fn from_raw(
        member_index: u32,
        iteration: u32,
        raw_text: String,
        usage: TokenUsage,
        wall_time_ms: u64,
        finish_reason: FinishReason,
    ) -> Self {
        let stripped = prompts::strip_think(&raw_text);
        let answer = answer::extract_boxed(&stripped.text);
        Self {
            member_index,
            iteration,
            raw_text,
            solution_text: stripped.text,
            answer,
            usage,
            wall_time_ms,
            finish_reason,
            think_malformed: stripped.malformed,
        }
    }

    /// Canonical form of the extracted answer, used as the voting key.
    pub fn canonical_answer(&self) -> Option<String> {
        self.answer.as_deref().map(|a| answer::canonicalize(a).canonical_string)
    }
}

/// The population of exactly P candidates alive at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub iteration: u32,
    pub members: Vec<Candidate>,
}

impl Generation {
    /// Members must be indexed 0..P-1 in order and share `iteration`.
    pub fn new(iteration: u32, members: Vec<Candidate>) -> Result<Self, DomainError> {
        if members.is_empty() {
            return Err(DomainError::InvalidGeneration("empty generation".into()));
        }
        for (j, m) in members.iter().enumerate() {
            if m.member_index as usize != j {
                return Err(DomainError::InvalidGeneration(format!(
                    "member at position {j} has member_index {}",
                    m.member_index
                )));
            }
            if m.iteration != iteration {
                return Err(DomainError::InvalidGeneration(format!(
                    "member {j} has iteration {} in generation {iteration}",
                    m.iteration
                )));
            }
        }
        Ok(Self { iteration, members })
    }

    pub fn population_size(&self) -> usize {
        self.members.len()
    }

    /// Canonical answers per member, in member order.
    pub fn canonical_answers(&self) -> Vec<Option<String>> {
        self.members.iter().map(|m| m.canonical_answer()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid generation: {0}")]
    InvalidGeneration(String),
}

/// One named constraint violation from `validate_config`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every invariant of a strategy spec plus sampling parameters and
/// reports all violations, not just the first.
pub fn validate_config(
    spec: &StrategySpec,
    params: &GenerationParams,
) -> Result<(), Vec<ConfigViolation>> {
    let mut violations = Vec::new();
    let mut push = |field: &str, message: String| {
        violations.push(ConfigViolation { field: field.to_string(), message });
    };

    if !params.temperature.is_finite() {
        push("temperature", "must be finite".into());
    } else if params.temperature < 0.0 {
        push("temperature", "must be >= 0".into());
    }
    if params.max_new_tokens < 1 {
        push("max_new_tokens", "must be >= 1".into());
    }
    if spec.population_size < 1 {
        push("population_size", "must be >= 1".into());
    }

    match spec.kind {
        StrategyKind::Dser => {
            if spec.population_size != 1 {
                push("population_size", "dser requires P=1".into());
            }
        }
        StrategyKind::Baseline => {
            if spec.max_iterations != 0 {
                push("max_iterations", "baseline requires T=0".into());
            }
        }
        StrategyKind::GenSelect => {
            if spec.selection_rounds < 1 {
                push("selection_rounds", "genselect requires R >= 1".into());
            }
            if spec.max_iterations != 0 {
                push("max_iterations", "genselect performs no refinement; T must be 0".into());
            }
        }
        StrategyKind::PopulationEvolve => {}
    }

    match spec.early_stop {
        EarlyStop::None => {}
        EarlyStop::Unanimity => {
            if spec.kind != StrategyKind::PopulationEvolve {
                push("early_stop", "unanimity early stop applies to population_evolve only".into());
            }
        }
        EarlyStop::VerdictStreak { streak } => {
            if spec.kind != StrategyKind::Dser {
                push("early_stop", "verdict_streak early stop applies to dser only".into());
            }
            if streak < 1 {
                push("early_stop", "verdict_streak requires streak >= 1".into());
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_rejects_empty_fields() {
        assert!(Problem::new("", "x", None).is_err());
        assert!(Problem::new("p1", "  ", None).is_err());
        assert!(Problem::new("p1", "What is 1+1?", Some("2".into())).is_ok());
    }

    #[test]
    fn dser_with_p4_is_rejected_with_named_violation() {
        let spec = StrategySpec {
            population_size: 4,
            ..StrategySpec::dser(32)
        };
        let errs = validate_config(&spec, &GenerationParams::default()).unwrap_err();
        assert!(errs.iter().any(|v| v.message == "dser requires P=1"), "{errs:?}");
    }

    #[test]
    fn paper_scale_population_evolve_is_valid() {
        let spec = StrategySpec::population_evolve(16, 16);
        assert!(validate_config(&spec, &GenerationParams::default()).is_ok());
    }

    #[test]
    fn negative_temperature_is_rejected() {
        let params = GenerationParams { temperature: -0.1, ..Default::default() };
        let errs = validate_config(&StrategySpec::baseline(4), &params).unwrap_err();
        assert!(errs.iter().any(|v| v.field == "temperature"));
    }

    #[test]
    fn all_violations_are_reported_not_just_the_first() {
        let spec = StrategySpec {
            kind: StrategyKind::Dser,
            population_size: 0,
            max_iterations: 4,
            selection_rounds: 32,
            early_stop: EarlyStop::Unanimity,
        };
        let params = GenerationParams {
            temperature: f64::NAN,
            max_new_tokens: 0,
            seed: None,
        };
        let errs = validate_config(&spec, &params).unwrap_err();
        // temperature, max_new_tokens, P>=1, dser P=1, early_stop kind
        assert!(errs.len() >= 5, "{errs:?}");
    }

    #[test]
    fn candidate_derives_solution_and_answer_from_raw() {
        let c = Candidate::from_raw(
            0,
            0,
            "<think>scratch</think>Final: \\boxed{7}".into(),
            TokenUsage::new(10, 5),
            12,
            FinishReason::Stop,
        );
        assert_eq!(c.solution_text, "Final: \\boxed{7}");
        assert_eq!(c.answer.as_deref(), Some("7"));
        assert!(!c.think_malformed);
    }

    #[test]
    fn generation_enforces_index_and_iteration() {
        let mk = |j, i| {
            Candidate::from_raw(j, i, "\\boxed{1}".into(), TokenUsage::default(), 0, FinishReason::Stop)
        };
        assert!(Generation::new(0, vec![mk(0, 0), mk(1, 0)]).is_ok());
        assert!(Generation::new(0, vec![mk(1, 0)]).is_err());
        assert!(Generation::new(0, vec![mk(0, 1)]).is_err());
        assert!(Generation::new(0, vec![]).is_err());
    }

    #[test]
    fn early_stop_parses_from_cli_forms() {
        assert_eq!("none".parse::<EarlyStop>().unwrap(), EarlyStop::None);
        assert_eq!("unanimity".parse::<EarlyStop>().unwrap(), EarlyStop::Unanimity);
        assert_eq!(
            "verdict-streak=3".parse::<EarlyStop>().unwrap(),
            EarlyStop::VerdictStreak { streak: 3 }
        );
        assert!("sometimes".parse::<EarlyStop>().is_err());
    }
}
