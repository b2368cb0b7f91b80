//! Core data model shared by every phase of the pipeline: problems,
//! evaluation dimensions, generated inquiries, and graded outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grader::NormalizedAnswer;

/// Reasoning stage probed by a dimension.
///
/// The nine dimensions split 4 / 3 / 2 across the three stages, following
/// how a solver first reads a problem, then works it, then states the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Did the model understand the problem statement?
    Comprehension,
    /// Can the model carry out and adapt the solving process?
    Solving,
    /// Can the model account for the answer it produced?
    Summarization,
}

impl Stage {
    /// All stages in pipeline order.
    pub const ALL: [Stage; 3] = [Stage::Comprehension, Stage::Solving, Stage::Summarization];

    /// Human-readable name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Comprehension => "problem comprehension",
            Stage::Solving => "problem solving",
            Stage::Summarization => "solution summarization",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How a response to an inquiry is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PassMode {
    /// The response must reproduce the reference answer for the inquiry.
    MustMatch,
    /// The inquiry perturbed the problem, so echoing the original answer is a
    /// failure; any differing answer (or an unsolvable claim) passes.
    MustDiffer,
}

/// The nine probing dimensions.
///
/// Short codes (`D1`..`D9`) are stable identifiers used in stores, CLI flags,
/// and template directory names; [`Dimension::label`] gives the descriptive
/// name for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    /// Restate the problem with every sentence paraphrased; same answer.
    D1,
    /// Shuffle words within each sentence clause, keeping punctuation fixed;
    /// the result is unreadable and should not be answered.
    D2,
    /// Remove one necessary condition so the problem cannot be solved.
    D3,
    /// Add one redundant, irrelevant condition that must not change the
    /// answer.
    D4,
    /// Pose an analogous problem solved by the same strategy, with a new
    /// surface story (and therefore a new answer).
    D5,
    /// Keep the problem but change its numeric values; the answer changes
    /// accordingly.
    D6,
    /// Redefine a piece of underlying knowledge (a formula, a rule) and
    /// require the solution to adapt to the new definition.
    D7,
    /// Ask the model to explain one intermediate step of the solution.
    D8,
    /// Mask one numeric value in the problem and ask the model to recover it
    /// from the known final answer.
    D9,
}

impl Dimension {
    /// All dimensions in numeric order.
    pub const ALL: [Dimension; 9] = [
        Dimension::D1,
        Dimension::D2,
        Dimension::D3,
        Dimension::D4,
        Dimension::D5,
        Dimension::D6,
        Dimension::D7,
        Dimension::D8,
        Dimension::D9,
    ];

    /// 1-based index of the dimension (`D1` → 1, ..., `D9` → 9).
    pub fn index(self) -> u8 {
        match self {
            Dimension::D1 => 1,
            Dimension::D2 => 2,
            Dimension::D3 => 3,
            Dimension::D4 => 4,
            Dimension::D5 => 5,
            Dimension::D6 => 6,
            Dimension::D7 => 7,
            Dimension::D8 => 8,
            Dimension::D9 => 9,
        }
    }

    /// Inverse of [`Dimension::index`].
    pub fn from_index(index: u8) -> Option<Dimension> {
        Dimension::ALL.get(index.checked_sub(1)? as usize).copied()
    }

    /// The reasoning stage this dimension probes. Every dimension belongs to
    /// exactly one stage: D1–D4 comprehension, D5–D7 solving, D8–D9
    /// summarization.
    pub fn stage(self) -> Stage {
        match self {
            Dimension::D1 | Dimension::D2 | Dimension::D3 | Dimension::D4 => Stage::Comprehension,
            Dimension::D5 | Dimension::D6 | Dimension::D7 => Stage::Solving,
            Dimension::D8 | Dimension::D9 => Stage::Summarization,
        }
    }

    /// How responses to this dimension's inquiries are scored. D2 (shuffled
    /// wording) and D3 (missing condition) are counterfactual probes scored
    /// [`PassMode::MustDiffer`]; every other dimension has a reference answer
    /// the response must match.
    pub fn pass_mode(self) -> PassMode {
        match self {
            Dimension::D2 | Dimension::D3 => PassMode::MustDiffer,
            _ => PassMode::MustMatch,
        }
    }

    /// Descriptive name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Dimension::D1 => "sentence paraphrasing",
            Dimension::D2 => "sentence disruption",
            Dimension::D3 => "missing condition",
            Dimension::D4 => "redundant condition",
            Dimension::D5 => "analogical variant",
            Dimension::D6 => "numerical transformation",
            Dimension::D7 => "knowledge redefinition",
            Dimension::D8 => "intermediate step explanation",
            Dimension::D9 => "backward value inference",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.index())
    }
}

/// Parses `"D3"`, `"d3"`, or `"3"`.
impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches(['D', 'd']);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Dimension::from_index)
            .ok_or_else(|| format!("unknown dimension {s:?} (expected D1..D9)"))
    }
}

/// A source math word problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    /// Stable identifier, unique within a dataset.
    pub id: String,
    /// Full problem statement.
    pub body: String,
    /// Canonical final answer, as text.
    pub answer: String,
    /// Worked solution, when the dataset provides one.
    pub solution: Option<String>,
    /// Difficulty tier (e.g. 1–5), when the dataset provides one.
    pub difficulty: Option<u8>,
    /// Subject label, when the dataset provides one.
    pub subject: Option<String>,
    /// Character count of `body`, precomputed for length binning.
    pub length_chars: u64,
    /// Name of the dataset this problem came from.
    pub source: String,
}

impl Problem {
    /// Builds a problem, computing `length_chars` from the body.
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        answer: impl Into<String>,
        source: impl Into<String>,
    ) -> Problem {
        let body = body.into();
        Problem {
            id: id.into(),
            length_chars: body.chars().count() as u64,
            body,
            answer: answer.into(),
            solution: None,
            difficulty: None,
            subject: None,
            source: source.into(),
        }
    }
}

/// Lifecycle of a per-dimension inquiry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InquiryStatus {
    /// A candidate was accepted and the inquiry is ready to pose.
    Generated,
    /// Every candidate was rejected within the iteration budget; the problem
    /// is unsuited to this dimension and the dimension is skipped for it.
    Unsuitable,
    /// Generation aborted on an error (backend failure, unusable reference).
    Failed,
}

impl fmt::Display for InquiryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InquiryStatus::Generated => "generated",
            InquiryStatus::Unsuitable => "unsuitable",
            InquiryStatus::Failed => "failed",
        })
    }
}

/// Verdict from one review round during inquiry generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeVerdict {
    Accepted,
    Rejected,
}

/// One generate-and-review round, kept for auditing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Raw candidate inquiry text from the drafting agent.
    pub candidate: String,
    pub verdict: JudgeVerdict,
    /// Reviewer's stated reason, verbatim.
    pub rationale: String,
}

/// A probing inquiry generated for one problem and one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inquiry {
    pub problem_id: String,
    pub dimension: Dimension,
    /// Text posed to the target model. Empty unless `status` is `Generated`.
    pub text: String,
    /// Answer the target must match (`None` for counterfactual dimensions,
    /// whose outcomes are judged against the *original* answer instead).
    pub reference_answer: Option<String>,
    pub status: InquiryStatus,
    /// Rounds of the generate-and-review loop that ran (0 for rule-based D2).
    pub iterations_used: u32,
    /// All review rounds, in order.
    pub generation_trace: Vec<TraceStep>,
    /// Failure detail when `status` is `Failed`.
    pub error: Option<String>,
}

/// The full set of inquiries generated for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquirySuite {
    pub problem_id: String,
    /// One entry per requested dimension, keyed by dimension.
    pub inquiries: BTreeMap<Dimension, Inquiry>,
}

/// Why a graded response passed or failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassReason {
    /// Must-match: extracted answer equals the reference answer.
    MatchedReference,
    /// Must-match: extracted answer differs from the reference answer.
    MismatchedReference,
    /// Must-differ: response declared the problem unsolvable, as it should.
    DeclaredUnsolvable,
    /// Must-differ: answer differs from the original answer, as it should.
    DifferedFromOriginal,
    /// Must-differ: response reproduced the original answer despite the
    /// perturbation — the model ignored the change.
    MatchedOriginalOnCounterfactual,
    /// Not graded: inquiry unavailable or the call failed. Never a pass, and
    /// never counted as a dimension failure either.
    Skipped,
}

/// Graded outcome of posing one prompt to the target model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassOutcome {
    /// `None` for the unmodified source problem ("vanilla"), otherwise the
    /// dimension whose inquiry was posed.
    pub dimension: Option<Dimension>,
    /// Raw response text (empty if the call never completed).
    pub response_text: String,
    /// Answer extracted from the response, if grading got that far.
    pub extracted_answer: Option<NormalizedAnswer>,
    pub passed: bool,
    pub reason: PassReason,
    /// Error note for `Skipped` outcomes caused by failures.
    pub error: Option<String>,
}

impl PassOutcome {
    /// Outcome for an inquiry that was never posed (not generated, unsuitable,
    /// or the call failed). `passed` is always false.
    pub fn skipped(dimension: Option<Dimension>, error: Option<String>) -> PassOutcome {
        PassOutcome {
            dimension,
            response_text: String::new(),
            extracted_answer: None,
            passed: false,
            reason: PassReason::Skipped,
            error,
        }
    }
}

/// Prompt presentation mode for the target model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// The inquiry text as-is.
    Plain,
    /// Inquiry plus a step-by-step reasoning instruction.
    Cot,
    /// Inquiry preceded by one worked demonstration.
    Icl,
}

impl PromptMode {
    /// Flag value used on the command line and in store keys.
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Plain => "plain",
            PromptMode::Cot => "cot",
            PromptMode::Icl => "icl",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" => Ok(PromptMode::Plain),
            "cot" => Ok(PromptMode::Cot),
            "icl" => Ok(PromptMode::Icl),
            other => Err(format!(
                "unknown mode {other:?} (expected plain, cot, or icl)"
            )),
        }
    }
}

/// Full graded result for one problem under one target model and mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub problem_id: String,
    /// Outcome on the unmodified problem.
    pub vanilla: PassOutcome,
    /// Outcome per dimension. Dimensions without a usable inquiry carry a
    /// `Skipped` outcome, so every record covers all nine keys.
    pub per_dimension: BTreeMap<Dimension, PassOutcome>,
    pub target_model: String,
    pub mode: PromptMode,
}

/// Dimensions of a record that were actually graded (outcome not `Skipped`).
///
/// These are the dimensions that count toward mastery for this record;
/// skipped dimensions are omitted per problem rather than failed.
pub fn applicable_dimensions(record: &EvaluationRecord) -> BTreeSet<Dimension> {
    record
        .per_dimension
        .iter()
        .filter(|(_, outcome)| outcome.reason != PassReason::Skipped)
        .map(|(dim, _)| *dim)
        .collect()
}

/// One bin of a binned pass-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    /// Display label ("level 3", "length 120-184", ...).
    pub label: String,
    /// Inclusive lower bound of the member values.
    pub lower: f64,
    /// Inclusive upper bound of the member values.
    pub upper: f64,
    /// Number of records in the bin.
    pub count: u64,
    /// Mastery rate within the bin, absent when no member record has any
    /// applicable dimension.
    pub mastery_rate: Option<f64>,
}

/// Aggregated metrics over a set of evaluation records.
///
/// All rates are rendered to three decimal places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Dataset label the records came from.
    pub dataset: String,
    pub target_model: String,
    pub mode: PromptMode,
    /// Number of records aggregated.
    pub n_records: u64,
    /// Records with no applicable dimension at all (every inquiry skipped);
    /// these are excluded from the mastery denominator.
    pub n_zero_applicable: u64,
    /// Fraction of records whose vanilla outcome passed.
    pub vanilla_pass_rate: f64,
    /// Fraction of records (with ≥1 applicable dimension) passing every
    /// applicable dimension.
    pub mastery_pass_rate: f64,
    /// `mastery_pass_rate - vanilla_pass_rate`.
    pub delta: f64,
    /// Pass rate per stage.
    pub stage_pass_rates: BTreeMap<Stage, f64>,
    /// Pass rate per dimension (skips count as non-failing).
    pub dimension_pass_rates: BTreeMap<Dimension, f64>,
    /// Per-dimension pass rate restricted to records that passed vanilla;
    /// absent when no record passed vanilla.
    pub relative_pass_rates: Option<BTreeMap<Dimension, f64>>,
    /// Count of skipped (unsuitable / failed / unavailable) inquiries per
    /// dimension.
    pub skipped_counts: BTreeMap<Dimension, u64>,
    /// Mastery rate by difficulty tier, when difficulty labels are available.
    pub difficulty_bins: Option<Vec<BinReport>>,
    /// Mastery rate by problem length (equal-frequency bins), when problem
    /// metadata is available.
    pub length_bins: Option<Vec<BinReport>>,
    /// Human-readable notices about omitted tables or excluded records.
    pub notes: Vec<String>,
}
