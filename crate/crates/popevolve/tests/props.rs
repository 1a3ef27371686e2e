//! Property tests over the parsing, normalization, prompt-building, and
//! serialization invariants.

use proptest::prelude::*;

use popevolve::answer::{answers_equal, canonicalize, extract_boxed};
use popevolve::backend::{SimBackend, SimModelConfig};
use popevolve::domain::{
    Candidate, EarlyStop, FinishReason, Generation, GenerationParams, Problem, StrategyKind,
    StrategySpec, TokenUsage,
};
use popevolve::harness::SessionTransport;
use popevolve::metrics::majority_vote;
use popevolve::prompts::{strip_think, PromptSet};
use popevolve::strategies::{run_strategy, RunContext};

fn think_soup() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("<think>".to_string()),
            Just("</think>".to_string()),
            Just("<th".to_string()),
            Just("ink>".to_string()),
            Just("\\boxed{7}".to_string()),
            "[a-z \\n<>]{0,10}",
        ],
        0..12,
    )
    .prop_map(|pieces| pieces.concat())
}

fn boxed_soup() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("\\boxed{".to_string()),
            Just("{".to_string()),
            Just("}".to_string()),
            Just("\\frac{1}{2}".to_string()),
            "[a-z0-9 ]{0,8}",
        ],
        0..16,
    )
    .prop_map(|pieces| pieces.concat())
}

/// Distinct surface spellings of the integer `n`.
fn integer_variants(n: i64, k: u32) -> Vec<String> {
    vec![
        format!("{n}"),
        format!("0{n}"),
        format!("{n}."),
        format!("{n}.0"),
        format!("$ {n} $"),
        format!("\\frac{{{}}}{{{k}}}", n * i64::from(k)),
        format!("{}/{k}", n * i64::from(k)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn strip_think_is_idempotent(raw in think_soup()) {
        let once = strip_think(&raw);
        let twice = strip_think(&once.text);
        prop_assert_eq!(&once.text, &twice.text);
        prop_assert!(!twice.malformed);
    }

    #[test]
    fn extract_boxed_never_returns_unbalanced_braces(text in boxed_soup()) {
        if let Some(inner) = extract_boxed(&text) {
            let mut depth: i64 = 0;
            for ch in inner.chars() {
                match ch {
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        prop_assert!(depth >= 0, "closed below zero in {inner:?}");
                    }
                    _ => {}
                }
            }
            prop_assert_eq!(depth, 0, "unbalanced extraction {:?}", inner);
        }
    }

    #[test]
    fn integer_spellings_are_all_equivalent(n in 0i64..1000, k in 1u32..30) {
        let variants = integer_variants(n, k);
        for a in &variants {
            for b in &variants {
                prop_assert!(answers_equal(a, b), "{a:?} != {b:?}");
            }
            prop_assert!(!answers_equal(a, &format!("{}", n + 1)), "{a:?} == n+1");
        }
    }

    #[test]
    fn answers_equal_is_symmetric(a in "[0-9a-z./\\\\{}]{0,12}", b in "[0-9a-z./\\\\{}]{0,12}") {
        prop_assert_eq!(answers_equal(&a, &b), answers_equal(&b, &a));
    }

    #[test]
    fn canonical_string_is_a_fixed_point(surface in "[ 0-9a-z./$°\\\\{},+-]{0,16}") {
        let first = canonicalize(&surface);
        let second = canonicalize(&first.canonical_string);
        prop_assert_eq!(&first.canonical_string, &second.canonical_string);
    }

    #[test]
    fn evolving_prompt_stays_in_budget_with_p_sections(
        bodies in prop::collection::vec("[a-z \\n]{0,400}", 1..8),
        budget in 2_000usize..30_000,
    ) {
        let problem = Problem::new("p", "short question?", None).unwrap();
        let members = bodies
            .iter()
            .enumerate()
            .map(|(j, b)| {
                Candidate::from_raw(
                    j as u32,
                    0,
                    b.clone(),
                    TokenUsage::default(),
                    0,
                    FinishReason::Stop,
                )
            })
            .collect();
        let generation = Generation::new(0, members).unwrap();
        let text = PromptSet::default().build_evolving_prompt(&problem, &generation, budget);
        prop_assert!(text.chars().count() <= budget);
        let headers = (0..bodies.len())
            .filter(|j| text.contains(&format!("--- Solution {j} ---")))
            .count();
        prop_assert_eq!(headers, bodies.len());
    }

    #[test]
    fn majority_vote_is_permutation_invariant(
        answers in prop::collection::vec(prop::option::of(0u8..6), 0..24),
    ) {
        let base: Vec<Option<String>> =
            answers.iter().map(|a| a.map(|v| v.to_string())).collect();
        let mut rotated = base.clone();
        rotated.rotate_left(base.len() / 3 + 1);
        let mut reversed = base.clone();
        reversed.reverse();
        prop_assert_eq!(majority_vote(&base), majority_vote(&rotated));
        prop_assert_eq!(majority_vote(&base), majority_vote(&reversed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn core_types_round_trip_through_json(
        id in "[a-z][a-z0-9]{0,8}",
        statement in "[a-zA-Z0-9 ?+*-]{1,40}",
        answer in prop::option::of("[0-9]{1,4}"),
        temperature in 0.0f64..2.0,
        max_new_tokens in 1u32..100_000,
        kind_pick in 0u8..4,
        p in 1u32..20,
        t in 0u32..20,
        raw in "[a-z<>/{}\\\\ ]{0,40}",
    ) {
        let problem = Problem::new(&id, &statement, answer).unwrap();
        let round: Problem =
            serde_json::from_str(&serde_json::to_string(&problem).unwrap()).unwrap();
        prop_assert_eq!(&problem, &round);

        let params = GenerationParams { temperature, max_new_tokens, seed: Some(9) };
        let round: GenerationParams =
            serde_json::from_str(&serde_json::to_string(&params).unwrap()).unwrap();
        prop_assert_eq!(&params, &round);

        let kind = match kind_pick {
            0 => StrategyKind::PopulationEvolve,
            1 => StrategyKind::Dser,
            2 => StrategyKind::GenSelect,
            _ => StrategyKind::Baseline,
        };
        let spec = StrategySpec {
            kind,
            population_size: p,
            max_iterations: t,
            selection_rounds: 1 + t,
            early_stop: if t % 2 == 0 {
                EarlyStop::Unanimity
            } else {
                EarlyStop::VerdictStreak { streak: 1 + t }
            },
        };
        let round: StrategySpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        prop_assert_eq!(&spec, &round);

        let candidate =
            Candidate::from_raw(0, t, raw, TokenUsage::new(3, 4), 5, FinishReason::Stop);
        let round: Candidate =
            serde_json::from_str(&serde_json::to_string(&candidate).unwrap()).unwrap();
        prop_assert_eq!(&candidate, &round);

        let generation = Generation::new(t, vec![candidate]).unwrap();
        let round: Generation =
            serde_json::from_str(&serde_json::to_string(&generation).unwrap()).unwrap();
        prop_assert_eq!(&generation, &round);
    }

    #[test]
    fn strategy_outcomes_round_trip_through_json(seed in any::<u64>(), kind_pick in 0u8..4) {
        let problem = Problem::new("p1", "What is 6*7?", Some("42".into())).unwrap();
        let backend =
            SimBackend::new(SimModelConfig::default(), std::slice::from_ref(&problem)).unwrap();
        let spec = match kind_pick {
            0 => StrategySpec::population_evolve(3, 2),
            1 => StrategySpec::dser(2),
            2 => StrategySpec::genselect(3, 2),
            _ => StrategySpec::baseline(3),
        };
        let mut transport = SessionTransport::bare(&backend);
        let outcome = run_strategy(
            &problem,
            &spec,
            &GenerationParams::default(),
            &RunContext::with_seed(seed),
            &mut transport,
        )
        .unwrap();
        let round: popevolve::strategies::StrategyOutcome =
            serde_json::from_str(&serde_json::to_string(&outcome).unwrap()).unwrap();
        prop_assert_eq!(outcome, round);
    }
}
