//! Prompt construction. The five templates live as plain-text resource
//! files with named placeholders; rendering is a single pass over the
//! template, so placeholder-like text inside problem statements or
//! solutions is never re-expanded.

use std::fs;
use std::path::Path;

use crate::domain::{Generation, Problem};

pub const GENERATION_TEMPLATE: &str = include_str!("../resources/prompts/generation.txt");
pub const EVOLVING_TEMPLATE: &str = include_str!("../resources/prompts/evolving.txt");
pub const DSER_VERIFY_TEMPLATE: &str = include_str!("../resources/prompts/dser_verify.txt");
pub const DSER_CORRECT_TEMPLATE: &str = include_str!("../resources/prompts/dser_correct.txt");
pub const GENSELECT_TEMPLATE: &str = include_str!("../resources/prompts/genselect.txt");

/// Marker spliced into over-budget solutions in the evolving prompt.
pub const TRUNCATION_MARKER: &str = "[... truncated ...]";

/// The five templates used by the strategies. Defaults are the built-in
/// resource files; a directory of same-named `.txt` files can override them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generation: String,
    pub evolving: String,
    pub dser_verify: String,
    pub dser_correct: String,
    pub genselect: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            generation: GENERATION_TEMPLATE.to_string(),
            evolving: EVOLVING_TEMPLATE.to_string(),
            dser_verify: DSER_VERIFY_TEMPLATE.to_string(),
            dser_correct: DSER_CORRECT_TEMPLATE.to_string(),
            genselect: GENSELECT_TEMPLATE.to_string(),
        }
    }
}

impl PromptSet {
    /// Loads `generation.txt`, `evolving.txt`, `dser_verify.txt`,
    /// `dser_correct.txt`, and `genselect.txt` from a directory.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        Ok(Self {
            generation: read("generation.txt")?,
            evolving: read("evolving.txt")?,
            dser_verify: read("dser_verify.txt")?,
            dser_correct: read("dser_correct.txt")?,
            genselect: read("genselect.txt")?,
        })
    }

    pub fn build_generation_prompt(&self, problem: &Problem) -> String {
        render(&self.generation, &[("question", &problem.statement)])
    }

    /// Embeds the full previous generation (think-stripped) under a total
    /// character budget. Each member gets an equal share of whatever the
    /// fixed scaffold leaves; over-long solutions lose their middle so the
    /// opening context and the final boxed answer both survive.
    pub fn build_evolving_prompt(
        &self,
        problem: &Problem,
        previous: &Generation,
        budget_chars: usize,
    ) -> String {
        let count = previous.population_size().to_string();
        // Scaffold = the rendered prompt with every solution body empty;
        // whatever budget remains is split evenly across the members.
        let scaffold_len = render(
            &self.evolving,
            &[
                ("count", &count),
                ("question", &problem.statement),
                ("solutions", &solution_sections(previous, Some(0))),
            ],
        )
        .chars()
        .count();
        let spare = budget_chars.saturating_sub(scaffold_len);
        let per_solution_cap = spare / previous.population_size();
        render(
            &self.evolving,
            &[
                ("count", &count),
                ("question", &problem.statement),
                ("solutions", &solution_sections(previous, Some(per_solution_cap))),
            ],
        )
    }

    pub fn build_dser_verify_prompt(&self, solution_text: &str) -> String {
        render(&self.dser_verify, &[("solution", solution_text)])
    }

    pub fn build_dser_correct_prompt(
        &self,
        solution_text: &str,
        verification_report: &str,
    ) -> String {
        render(
            &self.dser_correct,
            &[("solution", solution_text), ("verification_report", verification_report)],
        )
    }

    pub fn build_genselect_prompt(&self, problem: &Problem, candidates: &Generation) -> String {
        let count = candidates.population_size().to_string();
        let max_idx = (candidates.population_size() - 1).to_string();
        render(
            &self.genselect,
            &[
                ("count", &count),
                ("question", &problem.statement),
                ("solutions", &solution_sections(candidates, None)),
                ("max_idx", &max_idx),
            ],
        )
    }
}

/// Single-pass template rendering: placeholders are located in the template
/// text only, left to right, and substituted values are never rescanned.
fn render(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        // Next placeholder occurrence in the remaining template text.
        let next = substitutions
            .iter()
            .filter_map(|(name, value)| {
                let token = format!("{{{name}}}");
                rest.find(&token).map(|pos| (pos, token.len(), *value))
            })
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, token_len, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + token_len..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Renders "--- Solution j ---" sections in member-index order, optionally
/// capping each body at `cap` characters.
fn solution_sections(generation: &Generation, cap: Option<usize>) -> String {
    generation
        .members
        .iter()
        .map(|m| {
            let body = match cap {
                Some(cap) => truncate_middle(&m.solution_text, cap),
                None => m.solution_text.clone(),
            };
            format!("--- Solution {} ---\n{}", m.member_index, body)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Caps `text` at `cap` characters by keeping its first and last quarter
/// (up to the cap) and eliding the middle with a marker. Boxed answers at
/// the end of a solution stay visible.
fn truncate_middle(text: &str, cap: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= cap {
        return text.to_string();
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    if cap <= marker_len {
        // No room for head + marker + tail; keep the tail, where the final
        // answer lives.
        return chars[chars.len() - cap..].iter().collect();
    }
    let keep = (cap - marker_len).min(chars.len() / 2);
    let head = keep / 2;
    let tail = keep - head;
    let mut out = String::with_capacity(cap);
    out.extend(&chars[..head]);
    out.push_str(TRUNCATION_MARKER);
    out.extend(&chars[chars.len() - tail..]);
    out
}

/// A raw model output with well-formed `<think>...</think>` spans removed
/// and leading whitespace trimmed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThinkStripped {
    pub text: String,
    /// An unclosed `<think>` tag was found; everything from it onward was
    /// dropped.
    pub malformed: bool,
}

/// Removes every `<think>...</think>` span. Removal repeats until no opening
/// tag remains, so spans formed by joining surrounding text are caught too;
/// an unclosed opening tag truncates the rest and flags the output.
pub fn strip_think(raw: &str) -> ThinkStripped {
    const OPEN: &str = "<think>";
    const CLOSE: &str = "</think>";
    let mut s = raw.to_string();
    let mut malformed = false;
    while let Some(open) = s.find(OPEN) {
        match s[open + OPEN.len()..].find(CLOSE) {
            Some(rel) => {
                let close_end = open + OPEN.len() + rel + CLOSE.len();
                s.replace_range(open..close_end, "");
            }
            None => {
                s.truncate(open);
                malformed = true;
                break;
            }
        }
    }
    ThinkStripped { text: s.trim_start().to_string(), malformed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Candidate, FinishReason, TokenUsage};
    use sha2::{Digest, Sha256};

    fn problem() -> Problem {
        Problem::new("p1", "What is 1+1?", Some("2".into())).unwrap()
    }

    fn generation_of(bodies: &[&str]) -> Generation {
        let members = bodies
            .iter()
            .enumerate()
            .map(|(j, body)| {
                Candidate::from_raw(
                    j as u32,
                    0,
                    body.to_string(),
                    TokenUsage::default(),
                    0,
                    FinishReason::Stop,
                )
            })
            .collect();
        Generation::new(0, members).unwrap()
    }

    #[test]
    fn template_files_match_frozen_checksums() {
        let cases = [
            (GENERATION_TEMPLATE, "01d42f2cca48266a59a9fc2aedd4e7e733b85fd3cd1af5f90a640ff81bfab42c"),
            (EVOLVING_TEMPLATE, "18329907068cff3aa7bee62c991c15a78914422b3eab21abdcc789669d3d1dc1"),
            (DSER_VERIFY_TEMPLATE, "e6cf4a54a4fa1cbae49d7aad4b7402fc429b2167585f3eec544b7174a60b1f3c"),
            (DSER_CORRECT_TEMPLATE, "13e095b4cab72f86ab231a416e7ba2e0b90ab8668b6afb601fe638a519d01eb2"),
            (GENSELECT_TEMPLATE, "dd1ef3d161099b72b5bca7e989750a8ecc1aea8b22b4c431ed0d1f8e90a928ef"),
        ];
        for (template, want) in cases {
            let got = hex::encode(Sha256::digest(template.as_bytes()));
            assert_eq!(got, want);
        }
    }

    #[test]
    fn each_placeholder_appears_exactly_once_in_its_template() {
        let count = |hay: &str, needle: &str| hay.matches(needle).count();
        assert_eq!(count(GENERATION_TEMPLATE, "{question}"), 1);
        assert_eq!(count(EVOLVING_TEMPLATE, "{question}"), 1);
        assert_eq!(count(EVOLVING_TEMPLATE, "{solutions}"), 1);
        assert_eq!(count(EVOLVING_TEMPLATE, "{count}"), 1);
        assert_eq!(count(DSER_VERIFY_TEMPLATE, "{solution}"), 1);
        assert_eq!(count(DSER_CORRECT_TEMPLATE, "{solution}"), 1);
        assert_eq!(count(DSER_CORRECT_TEMPLATE, "{verification_report}"), 1);
        assert_eq!(count(GENSELECT_TEMPLATE, "{solutions}"), 1);
        assert_eq!(count(GENSELECT_TEMPLATE, "{max_idx}"), 1);
    }

    #[test]
    fn generation_prompt_shape() {
        let text = PromptSet::default().build_generation_prompt(&problem());
        assert!(text.starts_with(
            "Please think step by step and put your final answer in \\boxed{}."
        ));
        assert!(text.contains("Question:\nWhat is 1+1?"));
    }

    #[test]
    fn placeholder_text_inside_statement_is_not_reexpanded() {
        let p = Problem::new("p2", "literal {question} stays", None).unwrap();
        let text = PromptSet::default().build_generation_prompt(&p);
        assert_eq!(text.matches("literal {question} stays").count(), 1);
        // The template's own placeholder was consumed; only the literal
        // from the statement remains.
        assert_eq!(text.matches("{question}").count(), 1);
    }

    #[test]
    fn strip_think_examples() {
        assert_eq!(
            strip_think("<think>scratch</think>Final: \\boxed{7}").text,
            "Final: \\boxed{7}"
        );
        assert_eq!(strip_think("no tags at all").text, "no tags at all");
        let unclosed = strip_think("<think>truncated, never closed");
        assert_eq!(unclosed.text, "");
        assert!(unclosed.malformed);
    }

    #[test]
    fn strip_think_removes_every_span_and_rejoined_spans() {
        assert_eq!(strip_think("a<think>x</think>b<think>y</think>c").text, "abc");
        // Removing the inner span joins "<th" + "ink>..." into a new span,
        // which must also be removed.
        let s = strip_think("<th<think>junk</think>ink>gone</think>kept");
        assert_eq!(s.text, "kept");
        assert!(!s.malformed);
    }

    #[test]
    fn evolving_prompt_matches_paper_box_shape() {
        let text = PromptSet::default().build_evolving_prompt(
            &problem(),
            &generation_of(&["A", "B"]),
            100_000,
        );
        assert!(text.contains("followed by 2 solutions"));
        assert!(text.contains("--- Solution 0 ---\nA"));
        assert!(text.contains("--- Solution 1 ---\nB"));
        assert!(text.ends_with("Your final response should include:\n- Detailed new solution."));
    }

    #[test]
    fn evolving_prompt_keeps_empty_members() {
        let text = PromptSet::default().build_evolving_prompt(
            &problem(),
            &generation_of(&["only me", ""]),
            100_000,
        );
        // Empty member: the section header stays, with an empty body line.
        assert!(text.contains("--- Solution 1 ---\n\n\nYour final response"));
    }

    #[test]
    fn evolving_prompt_respects_budget_and_keeps_boxed_answers() {
        let bodies: Vec<String> = (0..16)
            .map(|j| {
                let mut s = "x".repeat(10_000 - 20);
                s.push_str(&format!(" \\boxed{{{}}}", 100 + j));
                s
            })
            .collect();
        let refs: Vec<&str> = bodies.iter().map(String::as_str).collect();
        let generation = generation_of(&refs);
        let budget = 40_000;
        let text = PromptSet::default().build_evolving_prompt(&problem(), &generation, budget);
        assert!(text.chars().count() <= budget, "len = {}", text.chars().count());
        assert_eq!(text.matches(TRUNCATION_MARKER).count(), 16);
        for j in 0..16 {
            let needle = format!("\\boxed{{{}}}", 100 + j);
            assert!(text.contains(&needle), "missing {needle}");
        }
    }

    #[test]
    fn dser_verify_prompt_carries_the_judgement_instruction() {
        let text = PromptSet::default().build_dser_verify_prompt("some solution");
        assert!(text.contains(
            "\\boxed{correct} if correct, or \\boxed{incorrect} if incorrect."
        ));
        assert!(text.ends_with("Solution:\nsome solution"));
        let empty = PromptSet::default().build_dser_verify_prompt("");
        assert!(empty.ends_with("Solution:\n"));
    }

    #[test]
    fn genselect_prompt_renders_max_idx() {
        let bodies: Vec<String> = (0..16).map(|j| format!("\\boxed{{{j}}}")).collect();
        let refs: Vec<&str> = bodies.iter().map(String::as_str).collect();
        let text = PromptSet::default().build_genselect_prompt(&problem(), &generation_of(&refs));
        assert!(text.contains("followed by 16 solutions"));
        assert!(text.ends_with("where IDX is the index from 0 to 15 of the best solution."));

        let single = PromptSet::default()
            .build_genselect_prompt(&problem(), &generation_of(&["\\boxed{2}"]));
        assert!(single.contains("index from 0 to 0"));
    }

    #[test]
    fn truncate_middle_keeps_head_and_tail() {
        let text = format!("{}END", "a".repeat(500));
        let out = truncate_middle(&text, 100);
        assert!(out.chars().count() <= 100);
        assert!(out.starts_with('a'));
        assert!(out.ends_with("END"));
        assert!(out.contains(TRUNCATION_MARKER));
        // Tiny caps degrade to a tail slice.
        let tail = truncate_middle(&text, 5);
        assert_eq!(tail, "aaEND");
    }
}
