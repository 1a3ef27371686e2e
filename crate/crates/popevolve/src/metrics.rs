//! Scoring and aggregation: pass@k, majority voting, per-run accuracy,
//! cross-trial mean/std, per-iteration accuracy curves, and efficiency
//! ledgers recomputable from the raw event log.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::answer::answers_equal;
use crate::harness::Dataset;
use crate::record::RunRecord;
use crate::strategies::StrategyOutcome;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("pass@k domain error: {0}")]
    Domain(String),
    #[error("dataset fingerprint mismatch: record has {record}, dataset has {dataset}")]
    FingerprintMismatch { record: String, dataset: String },
    #[error("records disagree on {0}; refusing to aggregate")]
    Incompatible(String),
    #[error("no records given")]
    Empty,
}

/// Unbiased pass@k estimate from n samples with c correct, computed with the
/// numerically stable product form `1 - prod_{j=0}^{k-1} (n-c-j)/(n-j)`.
/// When fewer than k samples are wrong the probability is exactly 1.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    if c > n {
        return Err(MetricsError::Domain(format!("c={c} exceeds n={n}")));
    }
    if k < 1 || k > n {
        return Err(MetricsError::Domain(format!("k={k} outside 1..={n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut survive = 1.0_f64;
    for j in 0..k {
        survive *= (n - c - j) as f64 / (n - j) as f64;
    }
    Ok(1.0 - survive)
}

/// Mode over the non-null canonical answers; ties break to the
/// lexicographically smallest canonical string; all-null yields `None`.
pub fn majority_vote(answers: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for answer in answers.iter().flatten() {
        *counts.entry(answer.as_str()).or_insert(0) += 1;
    }
    // BTreeMap iterates keys in ascending order, so keeping the first
    // strictly-greater count leaves the smallest string among the winners.
    let mut best: Option<(&str, u32)> = None;
    for (answer, count) in &counts {
        if best.is_none_or(|(_, c)| *count > c) {
            best = Some((answer, *count));
        }
    }
    best.map(|(answer, _)| answer.to_string())
}

/// Majority vote pooled over every iteration of an outcome, not just the
/// final generation. An off-by-default analysis view.
pub fn pooled_history_vote(outcome: &StrategyOutcome) -> Option<String> {
    let pooled: Vec<Option<String>> =
        outcome.iterations.iter().flat_map(|i| i.canonical_answers()).collect();
    majority_vote(&pooled)
}

/// Per-problem correctness bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScore {
    pub problem_id: String,
    /// Rollouts in the final generation.
    pub n: u64,
    /// How many of them match the reference.
    pub c: u64,
    pub final_correct: bool,
    /// Majority-answer correctness at each recorded iteration.
    pub per_iteration_correct: Vec<bool>,
    pub has_reference: bool,
}

/// A scored run: per-problem scores plus the dataset accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub scores: Vec<ProblemScore>,
    /// Fraction of scored problems answered correctly, in [0, 1].
    pub accuracy: f64,
    pub scored_problems: usize,
    pub skipped_no_reference: Vec<String>,
    pub missing_outcome: Vec<String>,
}

impl RunScore {
    pub fn accuracy_pct(&self) -> f64 {
        self.accuracy * 100.0
    }
}

/// Scores a run against its dataset. Problems without a reference answer are
/// excluded from the accuracy and reported; accuracy is the fraction of the
/// remaining problems whose final answer matches the reference.
pub fn score_run(record: &RunRecord, dataset: &Dataset) -> Result<RunScore, MetricsError> {
    if record.config.dataset_sha256 != dataset.sha256 {
        return Err(MetricsError::FingerprintMismatch {
            record: record.config.dataset_sha256.clone(),
            dataset: dataset.sha256.clone(),
        });
    }
    Ok(score_outcomes(&record.outcomes, dataset))
}

/// The scoring core, over bare outcomes. `score_run` adds the dataset
/// fingerprint check on top.
pub fn score_outcomes(outcomes: &[StrategyOutcome], dataset: &Dataset) -> RunScore {
    let mut scores = Vec::new();
    let mut skipped_no_reference = Vec::new();
    let mut missing_outcome = Vec::new();
    let mut correct = 0usize;
    let mut scored = 0usize;

    for problem in &dataset.problems {
        let Some(outcome) = outcomes.iter().find(|o| o.problem_id == problem.id) else {
            missing_outcome.push(problem.id.clone());
            continue;
        };
        let Some(reference) = &problem.reference_answer else {
            skipped_no_reference.push(problem.id.clone());
            continue;
        };

        let equals_reference =
            |answer: &Option<String>| answer.as_deref().is_some_and(|a| answers_equal(a, reference));

        let final_correct = equals_reference(&outcome.final_answer);
        let last = outcome.iterations.last();
        let n = last.map_or(0, |i| i.members.len() as u64);
        let c = last.map_or(0, |i| {
            i.members.iter().filter(|m| equals_reference(&m.canonical)).count() as u64
        });
        let per_iteration_correct = outcome
            .iterations
            .iter()
            .map(|i| equals_reference(&majority_vote(&i.canonical_answers())))
            .collect();

        scored += 1;
        correct += usize::from(final_correct);
        scores.push(ProblemScore {
            problem_id: problem.id.clone(),
            n,
            c,
            final_correct,
            per_iteration_correct,
            has_reference: true,
        });
    }

    let accuracy = if scored == 0 { 0.0 } else { correct as f64 / scored as f64 };
    RunScore { scores, accuracy, scored_problems: scored, skipped_no_reference, missing_outcome }
}

/// One point of a per-iteration accuracy curve, percent scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u32,
    pub mean_pct: f64,
    pub std_pct: f64,
}

/// Per-iteration cost totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub iteration: u32,
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

/// Cross-trial aggregate for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub kind: String,
    pub population_size: u32,
    pub trials: usize,
    pub accuracy_mean_pct: f64,
    /// Population standard deviation over the trial accuracies.
    pub accuracy_std_pct: f64,
    pub curve: Vec<CurvePoint>,
    /// Token/time totals per iteration summed over all trials.
    pub ledger: Vec<LedgerRow>,
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, variance.sqrt())
}

/// Aggregates m independent trials of the same strategy on the same dataset:
/// mean and population std of accuracy, plus iteration curves aligned by
/// index. A trial that stopped early carries its converged accuracy forward
/// so every series has equal length.
pub fn aggregate_trials(
    records: &[&RunRecord],
    dataset: &Dataset,
) -> Result<AggregateReport, MetricsError> {
    let first = *records.first().ok_or(MetricsError::Empty)?;
    for record in records {
        if record.config.strategy.kind != first.config.strategy.kind {
            return Err(MetricsError::Incompatible("strategy kind".into()));
        }
        if record.config.dataset_sha256 != first.config.dataset_sha256 {
            return Err(MetricsError::Incompatible("dataset fingerprint".into()));
        }
    }

    let run_scores: Vec<RunScore> =
        records.iter().map(|r| score_run(r, dataset)).collect::<Result<_, _>>()?;
    let accuracies: Vec<f64> = run_scores.iter().map(RunScore::accuracy_pct).collect();
    let (accuracy_mean_pct, accuracy_std_pct) = mean_and_population_std(&accuracies);

    let curve_len = run_scores
        .iter()
        .flat_map(|s| s.scores.iter().map(|p| p.per_iteration_correct.len()))
        .max()
        .unwrap_or(0);
    let mut curve = Vec::with_capacity(curve_len);
    for t in 0..curve_len {
        let per_trial: Vec<f64> = run_scores
            .iter()
            .map(|s| {
                let mut correct = 0usize;
                for p in &s.scores {
                    // Carry the last recorded iteration forward after an
                    // early stop.
                    let idx = t.min(p.per_iteration_correct.len().saturating_sub(1));
                    correct += usize::from(*p.per_iteration_correct.get(idx).unwrap_or(&false));
                }
                if s.scores.is_empty() {
                    0.0
                } else {
                    correct as f64 / s.scores.len() as f64 * 100.0
                }
            })
            .collect();
        let (mean_pct, std_pct) = mean_and_population_std(&per_trial);
        curve.push(CurvePoint { iteration: t as u32, mean_pct, std_pct });
    }

    let mut ledger_map: BTreeMap<u32, LedgerRow> = BTreeMap::new();
    for record in records {
        for row in efficiency_ledger(record, true) {
            let entry = ledger_map.entry(row.iteration).or_insert(LedgerRow {
                iteration: row.iteration,
                requests: 0,
                prompt_tokens: 0,
                completion_tokens: 0,
                wall_time_ms: 0,
            });
            entry.requests += row.requests;
            entry.prompt_tokens += row.prompt_tokens;
            entry.completion_tokens += row.completion_tokens;
            entry.wall_time_ms += row.wall_time_ms;
        }
    }

    Ok(AggregateReport {
        kind: first.config.strategy.kind.to_string(),
        population_size: first.config.strategy.population_size,
        trials: records.len(),
        accuracy_mean_pct,
        accuracy_std_pct,
        curve,
        ledger: ledger_map.into_values().collect(),
    })
}

/// Sums request counts, token usage, and wall time per iteration index
/// straight from the raw event log. `include_iteration_zero = false` drops
/// the initial generation phase shared by every method.
pub fn efficiency_ledger(record: &RunRecord, include_iteration_zero: bool) -> Vec<LedgerRow> {
    let mut rows: BTreeMap<u32, LedgerRow> = BTreeMap::new();
    for event in &record.events {
        let iteration = event.fingerprint.iteration;
        if !include_iteration_zero && iteration == 0 {
            continue;
        }
        let row = rows.entry(iteration).or_insert(LedgerRow {
            iteration,
            requests: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
            wall_time_ms: 0,
        });
        row.requests += 1;
        row.prompt_tokens += event.prompt_tokens;
        row.completion_tokens += event.completion_tokens;
        row.wall_time_ms += event.wall_time_ms;
    }
    rows.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn of(answers: &[Option<&str>]) -> Vec<Option<String>> {
        answers.iter().map(|a| a.map(str::to_string)).collect()
    }

    #[test]
    fn pass_at_k_boundary_values() {
        assert_eq!(pass_at_k(16, 16, 16).unwrap(), 1.0);
        assert_eq!(pass_at_k(16, 0, 8).unwrap(), 0.0);
        assert_eq!(pass_at_k(5, 3, 3).unwrap(), 1.0, "n-c < k forces certainty");
    }

    #[test]
    fn pass_at_k_spot_value_matches_combinatorics() {
        // 1 - C(12,4)/C(16,4) = 1 - 495/1820
        let expected = 1.0 - 495.0 / 1820.0;
        let got = pass_at_k(16, 4, 4).unwrap();
        assert!((got - expected).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn pass_at_k_rejects_out_of_domain_arguments() {
        assert!(pass_at_k(4, 5, 1).is_err());
        assert!(pass_at_k(4, 2, 5).is_err());
        assert!(pass_at_k(4, 2, 0).is_err());
    }

    #[test]
    fn pass_at_k_is_monotone_in_k_and_c() {
        let n = 16;
        for c in 0..=n {
            let mut prev = 0.0;
            for k in 1..=n {
                let v = pass_at_k(n, c, k).unwrap();
                assert!(v >= prev - 1e-15, "k-monotonicity at c={c} k={k}");
                prev = v;
            }
        }
        for k in 1..=16 {
            let mut prev = 0.0;
            for c in 0..=16 {
                let v = pass_at_k(16, c, k).unwrap();
                assert!(v >= prev - 1e-15, "c-monotonicity at c={c} k={k}");
                prev = v;
            }
        }
    }

    #[test]
    fn majority_vote_examples() {
        assert_eq!(majority_vote(&of(&[Some("3"), Some("3"), Some("5")])).as_deref(), Some("3"));
        assert_eq!(majority_vote(&of(&[Some("2"), Some("1")])).as_deref(), Some("1"));
        assert_eq!(majority_vote(&of(&[None, None])), None);
        assert_eq!(majority_vote(&of(&[])), None);
        assert_eq!(
            majority_vote(&of(&[None, Some("9"), None])).as_deref(),
            Some("9"),
            "nulls never vote"
        );
    }

    #[test]
    fn two_point_aggregate_statistics() {
        let (mean, std) = mean_and_population_std(&[80.0, 90.0]);
        assert!((mean - 85.0).abs() < 1e-12);
        assert!((std - 5.0).abs() < 1e-12);
        let (_, single) = mean_and_population_std(&[42.0]);
        assert_eq!(single, 0.0);
    }
}
