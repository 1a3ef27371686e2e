//! Final-answer handling: boxed extraction, normalization into exact
//! rationals, equivalence checking, and parsing of verification verdicts and
//! selection judgments.
//!
//! The equivalence check is a deliberately small, transparent subset of full
//! math-verification: integers, finite decimals, `\frac{a}{b}`, and `a/b`
//! compare as exact rationals; everything else compares by normalized
//! string. No symbolic algebra, no radical or pi evaluation.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

/// A normalized answer: the trimmed surface form, the exact rational value
/// when one of the supported numeric shapes parsed, and the canonical string
/// used as a voting key.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalAnswer {
    pub surface: String,
    pub numeric: Option<BigRational>,
    pub canonical_string: String,
}

/// Returns the contents of the last `\boxed{...}` in `text`, matching braces
/// so nested groups survive intact. `None` if there is no occurrence or the
/// last occurrence never balances.
pub fn extract_boxed(text: &str) -> Option<String> {
    const OPEN: &str = "\\boxed{";
    let start = text.rfind(OPEN)? + OPEN.len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Replaces `from` with `to` repeatedly until the string stops changing, so
/// occurrences formed by earlier replacements are caught too. Requires that
/// each round strictly shrinks the string, which every caller here satisfies.
fn replace_to_fixpoint(mut s: String, from: &str, to: &str) -> String {
    debug_assert!(to.len() < from.len());
    loop {
        let next = s.replace(from, to);
        if next == s {
            return s;
        }
        s = next;
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

static INT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+$").unwrap());
static DECIMAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)\.(\d+)$").unwrap());
static FRAC_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)\\frac\{([+-]?\d+)\}\{([+-]?\d+)\}$").unwrap());
static SLASH_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([+-]?\d+)/(\d+)$").unwrap());

const MAX_DECIMAL_DIGITS: usize = 40;

fn parse_numeric(s: &str) -> Option<BigRational> {
    if INT_RE.is_match(s) {
        let n: BigInt = s.parse().ok()?;
        return Some(BigRational::from_integer(n));
    }
    if let Some(caps) = DECIMAL_RE.captures(s) {
        let sign = &caps[1];
        let int_part = &caps[2];
        let frac_part = &caps[3];
        let int_trimmed = int_part.trim_start_matches('0');
        let significant = if int_trimmed.is_empty() {
            frac_part.trim_start_matches('0').len()
        } else {
            int_trimmed.len() + frac_part.len()
        };
        if significant > MAX_DECIMAL_DIGITS {
            return None;
        }
        let digits: BigInt = format!("{}{}", int_part, frac_part).parse().ok()?;
        let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value = BigRational::new(digits, denom);
        if sign == "-" {
            value = -value;
        }
        return Some(value);
    }
    if let Some(caps) = FRAC_RE.captures(s) {
        let numer: BigInt = caps[2].parse().ok()?;
        let denom: BigInt = caps[3].parse().ok()?;
        if denom.sign() == Sign::NoSign {
            return None;
        }
        let mut value = BigRational::new(numer, denom);
        if &caps[1] == "-" {
            value = -value;
        }
        return Some(value);
    }
    if let Some(caps) = SLASH_RE.captures(s) {
        let numer: BigInt = caps[1].parse().ok()?;
        let denom: BigInt = caps[2].parse().ok()?;
        if denom.sign() == Sign::NoSign {
            return None;
        }
        return Some(BigRational::new(numer, denom));
    }
    None
}

fn render_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Normalizes an answer surface string. The pipeline trims, strips LaTeX
/// wrappers (`\left`/`\right`, `$`, `\,`), drops trailing period and degree
/// markers, rewrites `\dfrac` to `\frac`, and then attempts an exact
/// rational parse. Unparseable forms keep a whitespace-collapsed string
/// canonical form.
pub fn canonicalize(surface: &str) -> CanonicalAnswer {
    let mut s = surface.trim().to_string();
    s = replace_to_fixpoint(s, "\\left", "");
    s = replace_to_fixpoint(s, "\\right", "");
    s = replace_to_fixpoint(s, "$", "");
    s = replace_to_fixpoint(s, "\\,", "");
    s = replace_to_fixpoint(s, "\\dfrac", "\\frac");

    loop {
        let trimmed = s.trim_end();
        if trimmed.len() != s.len() {
            s.truncate(trimmed.len());
            continue;
        }
        let stripped = s
            .strip_suffix("^{\\circ}")
            .or_else(|| s.strip_suffix("^\\circ"))
            .or_else(|| s.strip_suffix('°'))
            .or_else(|| s.strip_suffix('.'));
        match stripped {
            Some(rest) => s = rest.to_string(),
            None => break,
        }
    }
    let s = s.trim().to_string();

    let numeric = parse_numeric(&s);
    let canonical_string = match &numeric {
        Some(r) => render_rational(r),
        None => {
            let collapsed = collapse_whitespace(&s);
            if collapsed.contains(',') && collapsed.chars().any(|c| c.is_ascii_digit()) {
                log::debug!("answer kept as string form (no numeric parse): {collapsed:?}");
            }
            collapsed
        }
    };

    CanonicalAnswer { surface: surface.trim().to_string(), numeric, canonical_string }
}

/// True iff both surfaces normalize to equal exact rationals, or neither is
/// numeric and their canonical strings match. A numeric form never equals a
/// non-numeric form.
pub fn answers_equal(a: &str, b: &str) -> bool {
    let ca = canonicalize(a);
    let cb = canonicalize(b);
    match (&ca.numeric, &cb.numeric) {
        (Some(ra), Some(rb)) => ra == rb,
        (None, None) => ca.canonical_string == cb.canonical_string,
        _ => false,
    }
}

/// Outcome of one verification request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DserVerdict {
    Correct,
    Incorrect,
    Unparseable,
}

/// Reads the last boxed token of a verification response, case-insensitively.
pub fn parse_dser_verdict(text: &str) -> DserVerdict {
    match extract_boxed(text) {
        Some(token) => match token.trim().to_ascii_lowercase().as_str() {
            "correct" => DserVerdict::Correct,
            "incorrect" => DserVerdict::Incorrect,
            _ => DserVerdict::Unparseable,
        },
        None => DserVerdict::Unparseable,
    }
}

static JUDGMENT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Judgment:\s*\[?\s*(\d+)\s*\]?").unwrap());

/// Finds the last `Judgment: [IDX]` (brackets optional) and returns the
/// index when it lies in `0..=max_idx`.
pub fn parse_genselect_judgment(text: &str, max_idx: usize) -> Option<usize> {
    let caps = JUDGMENT_RE.captures_iter(text).last()?;
    let idx: usize = caps[1].parse().ok()?;
    (idx <= max_idx).then_some(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_boxed_basic() {
        assert_eq!(extract_boxed("thus \\boxed{42}.").as_deref(), Some("42"));
        assert_eq!(
            extract_boxed("\\boxed{\\frac{1}{2}}").as_deref(),
            Some("\\frac{1}{2}")
        );
        assert_eq!(extract_boxed("no box here"), None);
    }

    #[test]
    fn extract_boxed_takes_last_occurrence() {
        // Hand-enumerated fixture set for the last-occurrence rule.
        let cases = [
            ("\\boxed{1} ... \\boxed{3}", Some("3")),
            ("\\boxed{1}\\boxed{2}\\boxed{3}", Some("3")),
            ("a \\boxed{x} b \\boxed{y{z}} c", Some("y{z}")),
            ("\\boxed{good} then \\boxed{oops", None),
            ("\\boxed{", None),
        ];
        for (text, want) in cases {
            assert_eq!(extract_boxed(text).as_deref(), want, "text = {text:?}");
        }
    }

    #[test]
    fn canonicalize_leading_zeros() {
        let c = canonicalize("042");
        assert_eq!(c.canonical_string, "42");
        assert!(c.numeric.is_some());
    }

    #[test]
    fn canonicalize_reduces_fractions() {
        // Oracle: gcd(2, 4) = 2, so 2/4 reduces to 1/2.
        assert_eq!(canonicalize("\\frac{2}{4}").canonical_string, "1/2");
        assert_eq!(canonicalize("6/4").canonical_string, "3/2");
        assert_eq!(canonicalize("-\\frac{2}{4}").canonical_string, "-1/2");
        assert_eq!(canonicalize("\\dfrac{10}{5}").canonical_string, "2");
    }

    #[test]
    fn canonicalize_keeps_non_numeric_forms_as_strings() {
        let c = canonicalize("\\sqrt{3}");
        assert!(c.numeric.is_none());
        assert_eq!(c.canonical_string, "\\sqrt{3}");
        assert!(canonicalize("1,050").numeric.is_none());
    }

    #[test]
    fn canonicalize_strips_wrappers_and_markers() {
        assert_eq!(canonicalize("$\\left( 42 \\right)$").canonical_string, "( 42 )");
        assert_eq!(canonicalize(" 42. ").canonical_string, "42");
        assert_eq!(canonicalize("90^\\circ").canonical_string, "90");
        assert_eq!(canonicalize("90°").canonical_string, "90");
        assert_eq!(canonicalize("1\\,000").canonical_string, "1000");
    }

    #[test]
    fn canonicalize_decimals_exactly() {
        assert_eq!(canonicalize("0.5").canonical_string, "1/2");
        assert_eq!(canonicalize(".25").canonical_string, "1/4");
        assert_eq!(canonicalize("-0.5").canonical_string, "-1/2");
        assert_eq!(canonicalize("2.0").canonical_string, "2");
        // 3.5. -> trailing period stripped once, value stays a decimal
        assert_eq!(canonicalize("3.5.").canonical_string, "7/2");
    }

    #[test]
    fn decimal_digit_limit_is_enforced() {
        let forty = format!("0.{}", "1".repeat(40));
        assert!(canonicalize(&forty).numeric.is_some());
        let forty_one = format!("0.{}", "1".repeat(41));
        assert!(canonicalize(&forty_one).numeric.is_none());
    }

    #[test]
    fn answers_equal_examples() {
        assert!(answers_equal("0.5", "\\frac{1}{2}"));
        assert!(answers_equal("7", "7"));
        assert!(!answers_equal("\\sqrt{3}", "1.732"));
        assert!(!answers_equal("1/3", "0.333"));
        assert!(answers_equal("042", "42."));
    }

    #[test]
    fn zero_denominator_is_not_numeric() {
        assert!(canonicalize("\\frac{1}{0}").numeric.is_none());
        assert!(canonicalize("3/0").numeric.is_none());
        // And string equality still applies between identical degenerates.
        assert!(answers_equal("3/0", "3/0"));
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_dser_verdict("... \\boxed{correct}"), DserVerdict::Correct);
        assert_eq!(parse_dser_verdict("... \\boxed{Incorrect}"), DserVerdict::Incorrect);
        assert_eq!(parse_dser_verdict("no verdict at all"), DserVerdict::Unparseable);
        assert_eq!(parse_dser_verdict("\\boxed{maybe}"), DserVerdict::Unparseable);
        // Last box wins.
        assert_eq!(
            parse_dser_verdict("\\boxed{correct} wait \\boxed{incorrect}"),
            DserVerdict::Incorrect
        );
    }

    #[test]
    fn judgment_parsing() {
        assert_eq!(parse_genselect_judgment("Judgment: [3]", 15), Some(3));
        assert_eq!(parse_genselect_judgment("Judgment: 3", 15), Some(3));
        assert_eq!(parse_genselect_judgment("Judgment: [99]", 15), None);
        assert_eq!(parse_genselect_judgment("no judgment", 15), None);
        assert_eq!(
            parse_genselect_judgment("Judgment: [2]\n...\nJudgment: [5]", 15),
            Some(5)
        );
        assert_eq!(parse_genselect_judgment("Judgment: [0]", 0), Some(0));
    }
}
