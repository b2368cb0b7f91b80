//! Answer extraction and grading: pulls a final answer out of free-form model
//! output, normalizes it, and decides pass/fail for each dimension.

use std::fmt;
use std::io;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dimension, PassMode, PassOutcome, PassReason};

/// Relative tolerance for numeric equality: |a−b| ≤ tol · max(|a|, |b|).
static RELATIVE_TOLERANCE: Lazy<BigRational> =
    Lazy::new(|| BigRational::new(BigInt::one(), BigInt::from(1_000_000)));

/// Grading errors. Extraction itself is total and never fails.
#[derive(Debug, Error)]
pub enum GradeError {
    #[error("dimension {dimension} requires a reference answer but none was stored")]
    MissingReference { dimension: Dimension },
}

// ---------------------------------------------------------------------------
// Normalized answers
// ---------------------------------------------------------------------------

/// A model answer reduced to comparable form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizedAnswer {
    /// Exact rational value (integers, decimals, and fractions all land here).
    Numeric(BigRational),
    /// Canonicalized text: lowercased, trimmed, inner whitespace collapsed.
    Text(String),
    /// The response claimed the problem cannot be solved.
    UnsolvableClaim,
}

impl NormalizedAnswer {
    /// Numeric answer from an integer.
    pub fn from_int(n: i64) -> NormalizedAnswer {
        NormalizedAnswer::Numeric(BigRational::from_integer(BigInt::from(n)))
    }

    /// Text answer in canonical form.
    pub fn text(s: &str) -> NormalizedAnswer {
        NormalizedAnswer::Text(canonical_text(s))
    }

    /// The rational value, if numeric.
    pub fn as_numeric(&self) -> Option<&BigRational> {
        match self {
            NormalizedAnswer::Numeric(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for NormalizedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormalizedAnswer::Numeric(r) => write!(f, "{}", render_rational(r)),
            NormalizedAnswer::Text(t) => write!(f, "{t:?}"),
            NormalizedAnswer::UnsolvableClaim => write!(f, "<unsolvable>"),
        }
    }
}

fn render_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Wire form: rationals as `"n"` or `"n/d"` strings so stores stay readable
/// and loss-free.
#[derive(Serialize, Deserialize)]
struct AnswerRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<String>,
}

impl Serialize for NormalizedAnswer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            NormalizedAnswer::Numeric(r) => AnswerRepr {
                kind: "numeric".into(),
                value: Some(render_rational(r)),
            },
            NormalizedAnswer::Text(t) => AnswerRepr {
                kind: "text".into(),
                value: Some(t.clone()),
            },
            NormalizedAnswer::UnsolvableClaim => AnswerRepr {
                kind: "unsolvable".into(),
                value: None,
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NormalizedAnswer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = AnswerRepr::deserialize(deserializer)?;
        match repr.kind.as_str() {
            "numeric" => {
                let value = repr
                    .value
                    .ok_or_else(|| D::Error::custom("numeric answer missing value"))?;
                let rational = parse_plain_rational(&value)
                    .ok_or_else(|| D::Error::custom(format!("bad rational {value:?}")))?;
                Ok(NormalizedAnswer::Numeric(rational))
            }
            "text" => Ok(NormalizedAnswer::Text(repr.value.unwrap_or_default())),
            "unsolvable" => Ok(NormalizedAnswer::UnsolvableClaim),
            other => Err(D::Error::custom(format!("unknown answer kind {other:?}"))),
        }
    }
}

/// Parses the serialized `"n"` / `"n/d"` form (no units, no decimals).
fn parse_plain_rational(s: &str) -> Option<BigRational> {
    match s.split_once('/') {
        Some((n, d)) => {
            let numer: BigInt = n.trim().parse().ok()?;
            let denom: BigInt = d.trim().parse().ok()?;
            if denom.is_zero() {
                return None;
            }
            Some(BigRational::new(numer, denom))
        }
        None => Some(BigRational::from_integer(s.trim().parse().ok()?)),
    }
}

/// Lowercases, trims, collapses whitespace runs, and drops trailing sentence
/// punctuation, so `"  The  Answer. "` and `"the answer"` compare equal.
pub fn canonical_text(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .to_lowercase()
        .trim_end_matches(['.', '!', '?'])
        .trim()
        .to_string()
}

// ---------------------------------------------------------------------------
// Unsolvable-claim lexicon
// ---------------------------------------------------------------------------

/// Phrases that signal "this problem cannot be solved".
///
/// Stored lowercased; [`UnsolvableLexicon::contains_claim`] is a
/// case-insensitive substring test over the whole response.
#[derive(Debug, Clone)]
pub struct UnsolvableLexicon {
    phrases: Vec<String>,
}

impl UnsolvableLexicon {
    /// Parses one phrase per line; blank lines and `#` comments are ignored.
    pub fn from_lines(text: &str) -> UnsolvableLexicon {
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        UnsolvableLexicon { phrases }
    }

    /// Loads a phrase file in the same one-per-line format.
    pub fn from_path(path: &Path) -> io::Result<UnsolvableLexicon> {
        Ok(UnsolvableLexicon::from_lines(&std::fs::read_to_string(
            path,
        )?))
    }

    /// True if any phrase occurs in `text` (case-insensitive).
    pub fn contains_claim(&self, text: &str) -> bool {
        let haystack = text.to_lowercase();
        self.phrases.iter().any(|p| haystack.contains(p.as_str()))
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Built-in lexicon, compiled from `data/unsolvable_phrases.txt`.
pub fn default_lexicon() -> &'static UnsolvableLexicon {
    static LEXICON: Lazy<UnsolvableLexicon> =
        Lazy::new(|| UnsolvableLexicon::from_lines(include_str!("../data/unsolvable_phrases.txt")));
    &LEXICON
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

static ANSWER_IS_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(?:final\s+answer|answer)\s*(?:is|[:=])\s*([^\n]+)").unwrap());

/// Digit-led number token: integer, decimal, or fraction, with optional
/// thousands separators. Sign and currency are attached by look-back.
static NUMBER_TOKEN_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\d[\d,]*(?:\.\d+)?(?:/\d+(?:\.\d+)?)?").unwrap());

static FRAC_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\\[dt]?frac\s*\{\s*([^{}]+?)\s*\}\s*\{\s*([^{}]+?)\s*\}$").unwrap());

/// Extracts the final answer from a model response using the default
/// unsolvable-phrase lexicon. Total: always produces an answer.
pub fn extract_final_answer(response: &str) -> NormalizedAnswer {
    extract_final_answer_with(response, default_lexicon())
}

/// Like [`extract_final_answer`], with an explicit lexicon.
///
/// Rules are tried in order; the first that yields a usable answer wins:
/// 1. unsolvable-claim phrase anywhere in the response;
/// 2. the last `\boxed{...}` expression (brace-balanced);
/// 3. the text after the last `####` marker;
/// 4. the rest of the line after the last `answer is` / `answer:` / `answer =`;
/// 5. the last standalone number in the response;
/// 6. the whole trimmed response.
pub fn extract_final_answer_with(response: &str, lexicon: &UnsolvableLexicon) -> NormalizedAnswer {
    if lexicon.contains_claim(response) {
        return NormalizedAnswer::UnsolvableClaim;
    }
    if let Some(inner) = extract_boxed(response) {
        if let Some(answer) = normalize_candidate(&inner) {
            return answer;
        }
    }
    if let Some((_, after)) = response.rsplit_once("####") {
        if let Some(answer) = normalize_candidate(after) {
            return answer;
        }
    }
    if let Some(m) = ANSWER_IS_RE.captures_iter(response).last() {
        if let Some(answer) = normalize_candidate(&m[1]) {
            return answer;
        }
    }
    if let Some(token) = last_number_token(response) {
        if let Some(rational) = parse_numeric(&token) {
            return NormalizedAnswer::Numeric(rational);
        }
    }
    let trimmed = response.trim();
    match parse_numeric(trimmed) {
        Some(rational) => NormalizedAnswer::Numeric(rational),
        None => NormalizedAnswer::Text(canonical_text(trimmed)),
    }
}

/// Content of the last `\boxed{...}` in `text`, with nested braces balanced.
/// Used both for grading and for reading answers out of worked solutions.
pub fn extract_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")?;
    let inner_start = start + "\\boxed{".len();
    let mut depth = 1usize;
    for (offset, ch) in text[inner_start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[inner_start..inner_start + offset].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Normalizes one extracted payload; `None` when it holds nothing usable.
fn normalize_candidate(payload: &str) -> Option<NormalizedAnswer> {
    let trimmed = payload.trim();
    if let Some(rational) = parse_numeric(trimmed) {
        return Some(NormalizedAnswer::Numeric(rational));
    }
    // Payloads like "$\frac{1}{2}$ of the total" still hold a leading number.
    if let Some(token) = last_number_token(trimmed) {
        if trimmed.len() <= 80 {
            if let Some(rational) = parse_numeric(&token) {
                return Some(NormalizedAnswer::Numeric(rational));
            }
        }
    }
    let canonical = canonical_text(trimmed);
    if canonical.is_empty() {
        None
    } else {
        Some(NormalizedAnswer::Text(canonical))
    }
}

/// Finds the last digit-led number token, pulling in an adjacent minus sign
/// when it is not a binary operator (`"3-4"` keeps 4 positive, `"is -4"`
/// yields −4).
fn last_number_token(text: &str) -> Option<String> {
    let m = NUMBER_TOKEN_RE.find_iter(text).last()?;
    let mut token = m.as_str().to_string();
    let before = &text[..m.start()];
    let mut prior = before.chars().rev();
    if let Some('-') = prior.next() {
        let binary = matches!(prior.next(), Some(c) if c.is_ascii_digit() || c == ')');
        if !binary {
            token.insert(0, '-');
        }
    }
    Some(token)
}

/// Parses a numeric string to an exact rational.
///
/// Accepts integers, decimals, `a/b` fractions, and `\frac{a}{b}`; strips
/// currency symbols, thousands separators, percent signs, and trailing
/// periods. Returns `None` for anything else.
pub fn parse_numeric(s: &str) -> Option<BigRational> {
    let trimmed = s.trim();
    if let Some(caps) = FRAC_RE.captures(trimmed) {
        let numer = parse_numeric(&caps[1])?;
        let denom = parse_numeric(&caps[2])?;
        if denom.is_zero() {
            return None;
        }
        return Some(numer / denom);
    }
    let cleaned: String = trimmed
        .replace("\\$", "")
        .replace("\\%", "")
        .replace("\\!", "")
        .replace("\\,", "")
        .chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | '¥' | '%' | ',') && !c.is_whitespace())
        .collect();
    let cleaned = cleaned.trim_end_matches('.');
    if cleaned.is_empty() {
        return None;
    }
    if let Some((numer, denom)) = cleaned.split_once('/') {
        let n = parse_decimal(numer)?;
        let d = parse_decimal(denom)?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    parse_decimal(cleaned)
}

/// Parses `[+-]?digits[.digits]` into an exact rational.
fn parse_decimal(s: &str) -> Option<BigRational> {
    let (negative, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let int_value: BigInt = if int_part.is_empty() {
        BigInt::zero()
    } else {
        int_part.parse().ok()?
    };
    let scale = BigInt::from(10u8).pow(frac_part.len() as u32);
    let frac_value: BigInt = if frac_part.is_empty() {
        BigInt::zero()
    } else {
        frac_part.parse().ok()?
    };
    let magnitude = BigRational::new(int_value * &scale + frac_value, scale);
    Some(if negative { -magnitude } else { magnitude })
}

// ---------------------------------------------------------------------------
// Equality and pass judgment
// ---------------------------------------------------------------------------

/// Answer equality: exact rational equality or within the relative tolerance;
/// text compares canonically; a text answer that parses as a number compares
/// numerically. Unsolvable claims only equal each other.
pub fn answers_equal(a: &NormalizedAnswer, b: &NormalizedAnswer) -> bool {
    use NormalizedAnswer::*;
    match (a, b) {
        (Numeric(x), Numeric(y)) => rationals_close(x, y),
        (Text(x), Text(y)) => canonical_text(x) == canonical_text(y),
        (Numeric(x), Text(t)) | (Text(t), Numeric(x)) => match parse_numeric(t) {
            Some(y) => rationals_close(x, &y),
            None => false,
        },
        (UnsolvableClaim, UnsolvableClaim) => true,
        _ => false,
    }
}

fn rationals_close(a: &BigRational, b: &BigRational) -> bool {
    if a == b {
        return true;
    }
    let diff = (a - b).abs();
    let bound = a.abs().max(b.abs()) * &*RELATIVE_TOLERANCE;
    diff <= bound
}

/// Grades a target-model response to a dimension's inquiry.
///
/// Must-match dimensions require `reference`; must-differ dimensions judge
/// against `original_answer` alone, so a response that reproduces the original
/// answer fails and one that differs (or declares the problem unsolvable)
/// passes.
pub fn judge_pass(
    dimension: Dimension,
    response: &str,
    reference: Option<&str>,
    original_answer: &str,
) -> Result<PassOutcome, GradeError> {
    judge_pass_with(
        dimension,
        response,
        reference,
        original_answer,
        default_lexicon(),
    )
}

/// Like [`judge_pass`], with an explicit unsolvable-phrase lexicon.
pub fn judge_pass_with(
    dimension: Dimension,
    response: &str,
    reference: Option<&str>,
    original_answer: &str,
    lexicon: &UnsolvableLexicon,
) -> Result<PassOutcome, GradeError> {
    let extracted = extract_final_answer_with(response, lexicon);
    let (passed, reason) = match dimension.pass_mode() {
        PassMode::MustMatch => {
            let reference = reference.ok_or(GradeError::MissingReference { dimension })?;
            let expected = extract_final_answer_with(reference, lexicon);
            if answers_equal(&extracted, &expected) {
                (true, PassReason::MatchedReference)
            } else {
                (false, PassReason::MismatchedReference)
            }
        }
        PassMode::MustDiffer => {
            let original = extract_final_answer_with(original_answer, lexicon);
            if extracted == NormalizedAnswer::UnsolvableClaim {
                (true, PassReason::DeclaredUnsolvable)
            } else if answers_equal(&extracted, &original) {
                (false, PassReason::MatchedOriginalOnCounterfactual)
            } else {
                (true, PassReason::DifferedFromOriginal)
            }
        }
    };
    Ok(PassOutcome {
        dimension: Some(dimension),
        response_text: response.to_string(),
        extracted_answer: Some(extracted),
        passed,
        reason,
        error: None,
    })
}

/// Grades a response to the unmodified problem against its known answer.
pub fn grade_vanilla(response: &str, original_answer: &str) -> PassOutcome {
    grade_vanilla_with(response, original_answer, default_lexicon())
}

/// Like [`grade_vanilla`], with an explicit unsolvable-phrase lexicon.
pub fn grade_vanilla_with(
    response: &str,
    original_answer: &str,
    lexicon: &UnsolvableLexicon,
) -> PassOutcome {
    let extracted = extract_final_answer_with(response, lexicon);
    let expected = extract_final_answer_with(original_answer, lexicon);
    let passed = answers_equal(&extracted, &expected);
    PassOutcome {
        dimension: None,
        response_text: response.to_string(),
        extracted_answer: Some(extracted),
        passed,
        reason: if passed {
            PassReason::MatchedReference
        } else {
            PassReason::MismatchedReference
        },
        error: None,
    }
}
