//! Aggregation of graded records into pass rates, mastery, and bins.
//!
//! All rates are computed as exact rationals and only converted to floats at
//! rendering time, so aggregate numbers are reproducible bit-for-bit.

use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::domain::{applicable_dimensions, Dimension, EvaluationRecord, PassReason, Stage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty record set")]
    EmptyRecordSet,
    #[error("no record has any applicable dimension")]
    NoApplicableRecords,
    #[error("no record passed the unmodified problem, so relative rates are undefined")]
    NoVanillaPasses,
    #[error("no applicable outcome in stage {stage}")]
    NoApplicableOutcomes { stage: Stage },
    #[error("bin count must be at least 1")]
    InvalidBinCount,
    #[error("need at least {needed} values for {needed} bins, got {got}")]
    TooFewValues { needed: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Per-record predicates
// ---------------------------------------------------------------------------

/// True when the record's outcome for `dim` was graded and passed.
pub fn dimension_passed(record: &EvaluationRecord, dim: Dimension) -> bool {
    record
        .per_dimension
        .get(&dim)
        .map(|o| o.reason != PassReason::Skipped && o.passed)
        .unwrap_or(false)
}

/// True unless the record was graded on `dim` and failed. Skipped dimensions
/// are omitted for the record — neither passes nor failures.
pub fn dimension_not_failed(record: &EvaluationRecord, dim: Dimension) -> bool {
    record
        .per_dimension
        .get(&dim)
        .map(|o| o.reason == PassReason::Skipped || o.passed)
        .unwrap_or(true)
}

/// True when every applicable dimension of `stage` passed (vacuously true if
/// none was applicable).
pub fn stage_passes(record: &EvaluationRecord, stage: Stage) -> bool {
    Dimension::ALL
        .iter()
        .filter(|d| d.stage() == stage)
        .all(|&d| dimension_not_failed(record, d))
}

/// True when the record has at least one graded dimension.
pub fn has_applicable(record: &EvaluationRecord) -> bool {
    !applicable_dimensions(record).is_empty()
}

/// Mastery for one record: every applicable dimension passed. Records with no
/// applicable dimension are vacuously mastered here; rate computations exclude
/// them from the denominator instead.
pub fn mastered(record: &EvaluationRecord) -> bool {
    applicable_dimensions(record)
        .iter()
        .all(|&d| dimension_passed(record, d))
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

fn rate(numer: usize, denom: usize) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Fraction of records satisfying `pred`. Errors on an empty record set.
pub fn pass_rate<F>(records: &[EvaluationRecord], pred: F) -> Result<BigRational, MetricsError>
where
    F: Fn(&EvaluationRecord) -> bool,
{
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let n = records.iter().filter(|r| pred(r)).count();
    Ok(rate(n, records.len()))
}

/// Fraction of records that passed the unmodified problem.
pub fn vanilla_pass_rate(records: &[EvaluationRecord]) -> Result<BigRational, MetricsError> {
    pass_rate(records, |r| r.vanilla.passed)
}

/// Fraction of records not failing `dim` (skips count as non-failing).
pub fn dimension_pass_rate(
    records: &[EvaluationRecord],
    dim: Dimension,
) -> Result<BigRational, MetricsError> {
    pass_rate(records, |r| dimension_not_failed(r, dim))
}

/// How per-stage rates are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageAggregation {
    /// A record passes a stage iff it passes every applicable dimension in
    /// it; the rate is the fraction of records passing.
    #[default]
    Conjunction,
    /// Passed outcomes over applicable outcomes, pooled across records.
    MicroAverage,
}

impl FromStr for StageAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conjunction" => Ok(StageAggregation::Conjunction),
            "micro" => Ok(StageAggregation::MicroAverage),
            other => Err(format!(
                "unknown stage aggregation {other:?} (expected conjunction or micro)"
            )),
        }
    }
}

/// Pass rate for one reasoning stage under the chosen aggregation.
pub fn stage_pass_rate(
    records: &[EvaluationRecord],
    stage: Stage,
    aggregation: StageAggregation,
) -> Result<BigRational, MetricsError> {
    match aggregation {
        StageAggregation::Conjunction => pass_rate(records, |r| stage_passes(r, stage)),
        StageAggregation::MicroAverage => {
            if records.is_empty() {
                return Err(MetricsError::EmptyRecordSet);
            }
            let mut applicable = 0usize;
            let mut passed = 0usize;
            for record in records {
                for (dim, outcome) in &record.per_dimension {
                    if dim.stage() == stage && outcome.reason != PassReason::Skipped {
                        applicable += 1;
                        if outcome.passed {
                            passed += 1;
                        }
                    }
                }
            }
            if applicable == 0 {
                return Err(MetricsError::NoApplicableOutcomes { stage });
            }
            Ok(rate(passed, applicable))
        }
    }
}

/// Fraction of records passing *every* applicable dimension, over records
/// with at least one applicable dimension.
pub fn mastery_pass_rate(records: &[EvaluationRecord]) -> Result<BigRational, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let eligible: Vec<&EvaluationRecord> = records.iter().filter(|r| has_applicable(r)).collect();
    if eligible.is_empty() {
        return Err(MetricsError::NoApplicableRecords);
    }
    let n = eligible.iter().filter(|r| mastered(r)).count();
    Ok(rate(n, eligible.len()))
}

/// Relative pass rate for `dim`: of the records that passed the unmodified
/// problem, the fraction that also passed `dim` (strictly — skips do not
/// count as passes here).
pub fn relative_pass_rate(
    records: &[EvaluationRecord],
    dim: Dimension,
) -> Result<BigRational, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let vanilla_passes: Vec<&EvaluationRecord> =
        records.iter().filter(|r| r.vanilla.passed).collect();
    if vanilla_passes.is_empty() {
        return Err(MetricsError::NoVanillaPasses);
    }
    let both = vanilla_passes
        .iter()
        .filter(|r| dimension_passed(r, dim))
        .count();
    Ok(rate(both, vanilla_passes.len()))
}

/// Mastery gap: mastery rate minus vanilla rate. Negative when probing
/// reveals brittleness the vanilla rate hides.
pub fn delta(vanilla: &BigRational, mastery: &BigRational) -> BigRational {
    mastery - vanilla
}

// ---------------------------------------------------------------------------
// Equal-frequency binning
// ---------------------------------------------------------------------------

/// One equal-frequency bin: indices into the input slice plus value bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBin {
    /// Indices of member values, in sorted-value order.
    pub indices: Vec<usize>,
    /// Smallest member value.
    pub lower: f64,
    /// Largest member value.
    pub upper: f64,
}

/// Splits `values` into `k` bins of near-equal population.
///
/// Values are sorted ascending (ties broken by input position, so the split
/// is deterministic); when `n` is not divisible by `k`, the first `n mod k`
/// bins take one extra member.
pub fn equal_frequency_bins(values: &[f64], k: usize) -> Result<Vec<ValueBin>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidBinCount);
    }
    if values.len() < k {
        return Err(MetricsError::TooFewValues {
            needed: k,
            got: values.len(),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let n = values.len();
    let base = n / k;
    let extra = n % k;
    let mut bins = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let indices: Vec<usize> = order[cursor..cursor + size].to_vec();
        cursor += size;
        let lower = values[indices[0]];
        let upper = values[*indices.last().expect("bins are non-empty")];
        bins.push(ValueBin {
            indices,
            lower,
            upper,
        });
    }
    Ok(bins)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Rounds an exact rate to three decimals (half away from zero) as an `f64`.
pub fn round3(rate: &BigRational) -> f64 {
    let millis = (rate * BigInt::from(1000)).round();
    millis
        .to_integer()
        .to_f64()
        .expect("rates are small; thousandths fit in f64")
        / 1000.0
}
