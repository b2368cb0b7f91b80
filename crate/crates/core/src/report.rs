//! Report assembly: aggregates evaluation records into a [`MetricsReport`]
//! and renders it as aligned plain text.
//!
//! All rates are computed as exact rationals and rounded to three decimals
//! only here, at the report boundary, so the JSON and text renderings agree
//! with each other and with any downstream recomputation.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;

use crate::domain::{
    BinReport, Dimension, EvaluationRecord, MetricsReport, PassReason, Problem, Stage,
};
use crate::metrics::{
    delta, dimension_pass_rate, equal_frequency_bins, has_applicable, mastered, mastery_pass_rate,
    relative_pass_rate, round3, stage_pass_rate, vanilla_pass_rate, MetricsError, StageAggregation,
};

/// Number of equal-frequency length bins.
pub const LENGTH_BIN_COUNT: usize = 5;

/// Mastery rate over one group of records: the fraction of records with at
/// least one applicable dimension that pass all of them. `None` when no
/// record in the group has an applicable dimension.
fn group_mastery(records: &[&EvaluationRecord]) -> Option<f64> {
    let eligible: Vec<_> = records.iter().filter(|r| has_applicable(r)).collect();
    if eligible.is_empty() {
        return None;
    }
    let passed = eligible.iter().filter(|r| mastered(r)).count();
    let rate = BigRational::new(passed.into(), eligible.len().into());
    Some(round3(&rate))
}

/// Builds the full metrics report from evaluation records.
///
/// `problems` supplies difficulty and length metadata; when it is absent (or
/// carries no usable labels) the corresponding breakdowns are omitted and a
/// note records why. Degenerate inputs that still permit a report — no
/// record with an applicable dimension, or no vanilla pass — likewise fall
/// back to a defined value plus a note rather than an error.
pub fn build_report(
    dataset: &str,
    records: &[EvaluationRecord],
    problems: Option<&[Problem]>,
    stage_aggregation: StageAggregation,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let mut notes = Vec::new();

    let target_model = records[0].target_model.clone();
    let mode = records[0].mode;
    if records
        .iter()
        .any(|r| r.target_model != target_model || r.mode != mode)
    {
        notes.push(
            "records mix target models or prompt modes; headline rates pool them".to_string(),
        );
    }

    let vanilla = vanilla_pass_rate(records)?;
    let mastery = match mastery_pass_rate(records) {
        Ok(rate) => rate,
        Err(MetricsError::NoApplicableRecords) => {
            notes.push(
                "no record has an applicable dimension; mastery rate reported as 0".to_string(),
            );
            BigRational::zero()
        }
        Err(e) => return Err(e),
    };
    let delta = delta(&vanilla, &mastery);

    let mut stage_pass_rates = BTreeMap::new();
    for stage in Stage::ALL {
        match stage_pass_rate(records, stage, stage_aggregation) {
            Ok(rate) => {
                stage_pass_rates.insert(stage, round3(&rate));
            }
            Err(MetricsError::NoApplicableOutcomes { stage }) => {
                notes.push(format!("{stage} stage omitted: no applicable outcomes"));
            }
            Err(e) => return Err(e),
        }
    }

    let mut dimension_pass_rates = BTreeMap::new();
    for dim in Dimension::ALL {
        dimension_pass_rates.insert(dim, round3(&dimension_pass_rate(records, dim)?));
    }

    let relative_pass_rates = match relative_pass_rate(records, Dimension::D1) {
        Err(MetricsError::NoVanillaPasses) => {
            notes.push(
                "no record passed the unmodified problem; relative rates omitted".to_string(),
            );
            None
        }
        Err(e) => return Err(e),
        Ok(first) => {
            let mut map = BTreeMap::new();
            map.insert(Dimension::D1, round3(&first));
            for &dim in &Dimension::ALL[1..] {
                map.insert(dim, round3(&relative_pass_rate(records, dim)?));
            }
            Some(map)
        }
    };

    let mut skipped_counts = BTreeMap::new();
    for dim in Dimension::ALL {
        let count = records
            .iter()
            .filter(|r| {
                r.per_dimension
                    .get(&dim)
                    .is_some_and(|o| o.reason == PassReason::Skipped)
            })
            .count() as u64;
        skipped_counts.insert(dim, count);
    }

    let n_zero_applicable = records.iter().filter(|r| !has_applicable(r)).count() as u64;

    // Join records with problem metadata for the difficulty / length splits.
    let (difficulty_bins, length_bins) = match problems {
        None => {
            notes.push(
                "problem metadata unavailable; difficulty and length breakdowns omitted"
                    .to_string(),
            );
            (None, None)
        }
        Some(problems) => {
            let by_id: BTreeMap<&str, &Problem> =
                problems.iter().map(|p| (p.id.as_str(), p)).collect();
            let joined: Vec<(&Problem, &EvaluationRecord)> = records
                .iter()
                .filter_map(|r| by_id.get(r.problem_id.as_str()).map(|p| (*p, r)))
                .collect();
            if joined.len() < records.len() {
                notes.push(format!(
                    "{} record(s) reference problems missing from the dataset and are \
                     excluded from the difficulty and length breakdowns",
                    records.len() - joined.len()
                ));
            }

            let mut tiers: BTreeMap<u8, Vec<&EvaluationRecord>> = BTreeMap::new();
            for (problem, record) in &joined {
                if let Some(tier) = problem.difficulty {
                    tiers.entry(tier).or_default().push(record);
                }
            }
            let difficulty_bins = if tiers.is_empty() {
                notes.push("no difficulty labels; difficulty breakdown omitted".to_string());
                None
            } else {
                Some(
                    tiers
                        .iter()
                        .map(|(tier, members)| BinReport {
                            label: format!("level {tier}"),
                            lower: f64::from(*tier),
                            upper: f64::from(*tier),
                            count: members.len() as u64,
                            mastery_rate: group_mastery(members),
                        })
                        .collect(),
                )
            };

            let lengths: Vec<f64> = joined.iter().map(|(p, _)| p.length_chars as f64).collect();
            let length_bins = match equal_frequency_bins(&lengths, LENGTH_BIN_COUNT) {
                Ok(bins) => Some(
                    bins.iter()
                        .map(|bin| {
                            let members: Vec<&EvaluationRecord> =
                                bin.indices.iter().map(|&i| joined[i].1).collect();
                            BinReport {
                                label: format!("length {}-{}", bin.lower as u64, bin.upper as u64),
                                lower: bin.lower,
                                upper: bin.upper,
                                count: bin.indices.len() as u64,
                                mastery_rate: group_mastery(&members),
                            }
                        })
                        .collect(),
                ),
                Err(MetricsError::TooFewValues { needed, got }) => {
                    notes.push(format!(
                        "length breakdown needs at least {needed} records, got {got}; omitted"
                    ));
                    None
                }
                Err(e) => return Err(e),
            };
            (difficulty_bins, length_bins)
        }
    };

    Ok(MetricsReport {
        dataset: dataset.to_string(),
        target_model,
        mode,
        n_records: records.len() as u64,
        n_zero_applicable,
        vanilla_pass_rate: round3(&vanilla),
        mastery_pass_rate: round3(&mastery),
        delta: round3(&delta),
        stage_pass_rates,
        dimension_pass_rates,
        relative_pass_rates,
        skipped_counts,
        difficulty_bins,
        length_bins,
        notes,
    })
}

fn fmt_rate(rate: f64) -> String {
    format!("{rate:.3}")
}

fn fmt_opt_rate(rate: Option<f64>) -> String {
    rate.map(fmt_rate).unwrap_or_else(|| "-".to_string())
}

/// Renders the report as aligned plain text.
pub fn render_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };

    line(format!(
        "dataset: {}   target: {}   mode: {}",
        report.dataset, report.target_model, report.mode
    ));
    line(format!(
        "records: {} ({} with no applicable dimension)",
        report.n_records, report.n_zero_applicable
    ));
    line(String::new());
    line(format!(
        "{:<22} {:>8}",
        "vanilla pass rate",
        fmt_rate(report.vanilla_pass_rate)
    ));
    line(format!(
        "{:<22} {:>8}",
        "mastery pass rate",
        fmt_rate(report.mastery_pass_rate)
    ));
    line(format!("{:<22} {:>8}", "delta", fmt_rate(report.delta)));

    line(String::new());
    line("stage pass rates".to_string());
    for stage in Stage::ALL {
        let shown = fmt_opt_rate(report.stage_pass_rates.get(&stage).copied());
        line(format!("  {:<24} {:>8}", stage.label(), shown));
    }

    line(String::new());
    line(format!(
        "{:<40} {:>8} {:>10} {:>9}",
        "dimension pass rates", "rate", "relative", "skipped"
    ));
    for dim in Dimension::ALL {
        let rate = fmt_opt_rate(report.dimension_pass_rates.get(&dim).copied());
        let relative = fmt_opt_rate(
            report
                .relative_pass_rates
                .as_ref()
                .and_then(|m| m.get(&dim).copied()),
        );
        let skipped = report.skipped_counts.get(&dim).copied().unwrap_or(0);
        line(format!(
            "  {:<38} {:>8} {:>10} {:>9}",
            format!("{dim} {}", dim.label()),
            rate,
            relative,
            skipped
        ));
    }

    for (title, bins) in [
        ("mastery by difficulty", &report.difficulty_bins),
        ("mastery by problem length", &report.length_bins),
    ] {
        if let Some(bins) = bins {
            line(String::new());
            line(format!("{:<22} {:>8} {:>9}", title, "count", "mastery"));
            for bin in bins {
                line(format!(
                    "  {:<20} {:>8} {:>9}",
                    bin.label,
                    bin.count,
                    fmt_opt_rate(bin.mastery_rate)
                ));
            }
        }
    }

    if !report.notes.is_empty() {
        line(String::new());
        line("notes".to_string());
        for note in &report.notes {
            line(format!("  - {note}"));
        }
    }
    out
}
