//! Acceptance suite: one test per shipping criterion, each printing a
//! `criterion N PASS` line on success. Everything runs offline against
//! scripted backends and independent oracles computed inside this file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mathprobe::dataset::{load_problems, DatasetError, DatasetFormat};
use mathprobe::domain::{
    Dimension, EvaluationRecord, InquiryStatus, PassOutcome, PassReason, Problem, PromptMode, Stage,
};
use mathprobe::engine::{
    build_entry, disrupt_sentences, problem_seed, EngineConfig, CLAUSE_DELIMITERS,
};
use mathprobe::gateway::{BackendDescriptor, CallLog, Gateway, ScriptRule};
use mathprobe::grader::judge_pass;
use mathprobe::metrics::{
    dimension_pass_rate, equal_frequency_bins, mastery_pass_rate, relative_pass_rate,
    stage_pass_rate, MetricsError, StageAggregation,
};
use mathprobe::pipeline::{
    run_evaluate, run_generate, run_report, EvaluateOptions, GenerateOptions, RunPaths,
};
use mathprobe::prompts::TemplateSet;
use mathprobe::report::{build_report, render_text};

// ---------------------------------------------------------------------------
// Record builders
// ---------------------------------------------------------------------------

fn outcome(dim: Option<Dimension>, flag: Option<bool>) -> PassOutcome {
    match flag {
        Some(passed) => PassOutcome {
            dimension: dim,
            response_text: "r".into(),
            extracted_answer: None,
            passed,
            reason: if passed {
                PassReason::MatchedReference
            } else {
                PassReason::MismatchedReference
            },
            error: None,
        },
        None => PassOutcome::skipped(dim, None),
    }
}

/// Record from per-dimension flags: `Some(true)` pass, `Some(false)` fail,
/// `None` skipped.
fn record(id: &str, vanilla: bool, flags: &[(Dimension, Option<bool>)]) -> EvaluationRecord {
    let per_dimension = flags
        .iter()
        .map(|&(dim, flag)| (dim, outcome(Some(dim), flag)))
        .collect();
    EvaluationRecord {
        problem_id: id.into(),
        vanilla: outcome(None, Some(vanilla)),
        per_dimension,
        target_model: "fixture".into(),
        mode: PromptMode::Plain,
    }
}

fn random_records(rng: &mut StdRng, n: usize) -> Vec<EvaluationRecord> {
    (0..n)
        .map(|i| {
            let vanilla = rng.gen_bool(0.6);
            let flags: Vec<(Dimension, Option<bool>)> = Dimension::ALL
                .iter()
                .map(|&dim| {
                    let flag = match rng.gen_range(0..10) {
                        0..=5 => Some(true),
                        6..=7 => Some(false),
                        _ => None,
                    };
                    (dim, flag)
                })
                .collect();
            record(&format!("p/{i}"), vanilla, &flags)
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(num.into(), den.into())
}

// ---------------------------------------------------------------------------
// 1. Headline delta arithmetic
// ---------------------------------------------------------------------------

/// Builds 1000 fully-graded records with the given vanilla and mastery
/// counts, so the aggregate rates are exact thousandths.
fn synthetic_thousand(vanilla_passes: usize, mastered: usize) -> Vec<EvaluationRecord> {
    (0..1000)
        .map(|i| {
            let flags: Vec<(Dimension, Option<bool>)> = Dimension::ALL
                .iter()
                .map(|&dim| (dim, Some(i < mastered || dim != Dimension::D7)))
                .collect();
            record(&format!("p/{i}"), i < vanilla_passes, &flags)
        })
        .collect()
}

#[test]
fn criterion_1_delta_rows_reproduce_fixture_aggregates() {
    let started = Instant::now();
    for (vanilla, mastered, want_delta) in [(758, 393, -0.365), (954, 671, -0.283)] {
        let records = synthetic_thousand(vanilla, mastered);
        let report =
            build_report("fixture", &records, None, StageAggregation::Conjunction).unwrap();
        assert_eq!(report.n_records, 1000);
        assert_eq!(report.vanilla_pass_rate, vanilla as f64 / 1000.0);
        assert_eq!(report.mastery_pass_rate, mastered as f64 / 1000.0);
        assert_eq!(
            report.delta, want_delta,
            "delta for ({vanilla}, {mastered})"
        );
        let text = render_text(&report);
        assert!(
            text.contains(&format!("{want_delta:.3}")),
            "rendered report must show {want_delta}: {text}"
        );
    }
    assert!(
        started.elapsed().as_secs_f64() < 1.0,
        "fixture must evaluate in under 1s"
    );
    println!(
        "criterion 1 PASS: aggregate fixtures (0.758, 0.393) -> -0.365 and (0.954, 0.671) -> -0.283"
    );
}

// ---------------------------------------------------------------------------
// 2. Relative pass rate vs. brute-force set intersection
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_relative_rates_match_set_enumeration() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut compared = 0usize;
    for trial in 0..200 {
        let n = rng.gen_range(1..=40);
        let records = random_records(&mut rng, n);

        // Independent enumeration: explicit index sets and an intersection.
        let pass: BTreeSet<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.vanilla.passed)
            .map(|(i, _)| i)
            .collect();
        for dim in Dimension::ALL {
            let pass_d: BTreeSet<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    r.per_dimension
                        .get(&dim)
                        .is_some_and(|o| o.reason != PassReason::Skipped && o.passed)
                })
                .map(|(i, _)| i)
                .collect();
            let brute =
                (!pass.is_empty()).then(|| ratio(pass_d.intersection(&pass).count(), pass.len()));
            match (relative_pass_rate(&records, dim), brute) {
                (Ok(actual), Some(expected)) => {
                    assert_eq!(actual, expected, "trial {trial}, {dim}");
                    compared += 1;
                }
                (Err(MetricsError::NoVanillaPasses), None) => {}
                (actual, expected) => {
                    panic!("trial {trial}, {dim}: {actual:?} vs brute-force {expected:?}")
                }
            }
        }
    }
    assert!(
        compared > 1000,
        "expected a substantive comparison count, got {compared}"
    );
    assert!(
        started.elapsed().as_secs_f64() < 5.0,
        "oracle comparison must run in under 5s"
    );
    println!(
        "criterion 2 PASS: {compared} relative rates equal brute-force |Pass_i ∩ Pass|/|Pass| exactly"
    );
}

// ---------------------------------------------------------------------------
// 3. Mastery rate is a lower bound
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_mastery_is_bounded_by_every_dimension_and_stage() {
    let mut rng = StdRng::seed_from_u64(3);
    let mut trials = 0usize;
    let mut violations = Vec::new();
    let mut attempts = 0usize;
    while trials < 1000 {
        attempts += 1;
        assert!(attempts < 20_000, "random generator starved");
        let n = rng.gen_range(1..=30);
        let records = random_records(&mut rng, n);
        let mastery = match mastery_pass_rate(&records) {
            Ok(rate) => rate,
            // No record with an applicable dimension: the bound is vacuous.
            Err(MetricsError::NoApplicableRecords) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        };
        for dim in Dimension::ALL {
            let rate = dimension_pass_rate(&records, dim).unwrap();
            if mastery > rate {
                violations.push(format!("trial {trials}: mastery {mastery} > {dim} {rate}"));
            }
        }
        for stage in Stage::ALL {
            let rate = stage_pass_rate(&records, stage, StageAggregation::Conjunction).unwrap();
            if mastery > rate {
                violations.push(format!(
                    "trial {trials}: mastery {mastery} > {stage} {rate}"
                ));
            }
        }
        trials += 1;
    }
    assert!(
        violations.is_empty(),
        "{} violations:\n{}",
        violations.len(),
        violations.join("\n")
    );
    println!(
        "criterion 3 PASS: mastery rate ≤ every per-dimension and per-stage rate in 1000/1000 trials"
    );
}

// ---------------------------------------------------------------------------
// 4. Sentence disruption preserves clause structure
// ---------------------------------------------------------------------------

const WORDS: [&str; 24] = [
    "the",
    "a",
    "farmer",
    "train",
    "apples",
    "sells",
    "buys",
    "each",
    "per",
    "day",
    "hour",
    "seven",
    "twelve",
    "price",
    "total",
    "box",
    "remaining",
    "gives",
    "half",
    "speed",
    "distance",
    "costs",
    "more",
    "fewer",
];

/// Deterministic synthetic sentence `i`: one to three clauses of varied
/// length, mixed delimiters, occasional numbers.
fn corpus_sentence(i: usize) -> String {
    let clause_count = 1 + i % 3;
    let mut clauses = Vec::new();
    for c in 0..clause_count {
        let word_count = 1 + (i * 7 + c * 3) % 8;
        let mut words: Vec<String> = (0..word_count)
            .map(|w| WORDS[(i * 13 + c * 5 + w * 11) % WORDS.len()].to_string())
            .collect();
        if i.is_multiple_of(4) {
            words.push(format!("{}", i + c));
        }
        let delimiter = if c + 1 == clause_count {
            ['.', '?', '!'][i % 3]
        } else {
            [',', ';', ':'][c % 3]
        };
        clauses.push(format!("{}{}", words.join(" "), delimiter));
    }
    clauses.join(" ")
}

/// Disruption oracle: per-clause token multisets plus the delimiter string.
fn clause_profile(text: &str) -> (Vec<BTreeMap<&str, usize>>, String) {
    let multisets = text
        .split(CLAUSE_DELIMITERS)
        .map(|clause| {
            let mut counts = BTreeMap::new();
            for token in clause.split_whitespace() {
                *counts.entry(token).or_insert(0) += 1;
            }
            counts
        })
        .collect();
    let delimiters = text
        .chars()
        .filter(|c| CLAUSE_DELIMITERS.contains(c))
        .collect();
    (multisets, delimiters)
}

#[test]
fn criterion_4_disruption_preserves_clauses_and_is_deterministic() {
    let mut preserved = 0usize;
    let mut failures = Vec::new();
    for i in 0..500 {
        let body = corpus_sentence(i);
        let seed = problem_seed(&format!("sentence/{i}"), 42);
        let disrupted = disrupt_sentences(&body, seed);
        if clause_profile(&disrupted) == clause_profile(&body) {
            preserved += 1;
        } else {
            failures.push(format!("{body:?} -> {disrupted:?}"));
        }
        // Same seed, identical output across three runs.
        let second = disrupt_sentences(&body, seed);
        let third = disrupt_sentences(&body, seed);
        assert_eq!(disrupted, second, "run 2 diverged on sentence {i}");
        assert_eq!(disrupted, third, "run 3 diverged on sentence {i}");
    }
    assert_eq!(
        preserved,
        500,
        "structure broken on:\n{}",
        failures.join("\n")
    );
    println!(
        "criterion 4 PASS: 500/500 sentences keep clause token multisets and delimiter order; \
         fixed seed is reproducible across 3 runs"
    );
}

// ---------------------------------------------------------------------------
// 5. Review-loop budget
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_rejecting_judge_exhausts_exactly_the_budget() {
    let problem = Problem::new(
        "budget/1",
        "A pen costs $3. Ben buys 7 pens. How much does he spend?",
        "21",
        "fixture",
    );
    let templates = TemplateSet::embedded();
    for budget in [1u32, 3, 10] {
        let agent = BackendDescriptor::scripted_named(
            format!("agent-{budget}"),
            vec![
                ScriptRule::simple("This request is for dimension D5", "A candidate variant."),
                ScriptRule::simple("This review is for dimension D5", "REJECT not analogous"),
            ],
        );
        let mut config = EngineConfig::new(agent);
        config.max_iterations = budget;
        let gateway = Gateway::new(1);
        let mut log = CallLog::new();
        let inquiry = build_entry(
            &problem,
            Dimension::D5,
            &config,
            &gateway,
            &templates,
            &mut log,
        );

        assert_eq!(inquiry.status, InquiryStatus::Unsuitable, "budget {budget}");
        assert_eq!(inquiry.iterations_used, budget);
        assert_eq!(inquiry.generation_trace.len(), budget as usize);
        assert_eq!(
            log.count_tag("inquiry:D5"),
            budget as usize,
            "draft calls at budget {budget}"
        );
        assert_eq!(
            log.count_tag("judge:D5"),
            budget as usize,
            "review calls at budget {budget}"
        );
        assert_eq!(
            log.count_tag("reference:D5"),
            0,
            "no reference call after rejection"
        );
        assert_eq!(log.len(), 2 * budget as usize);
    }
    println!(
        "criterion 5 PASS: an always-rejecting judge yields unsuitable after exactly \
         {{1, 3, 10}} draft and review calls"
    );
}

// ---------------------------------------------------------------------------
// 6. Counterfactual pass logic, 30 hand-labeled cases
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_hand_labeled_grading_fixture_agrees() {
    use Dimension::*;
    use PassReason::*;
    /// One hand-labeled case: dimension, target response, stored reference,
    /// original answer, and the expected (passed, reason) verdict.
    type Case = (
        Dimension,
        &'static str,
        Option<&'static str>,
        &'static str,
        bool,
        PassReason,
    );
    let cases: Vec<Case> = vec![
        // Counterfactual probes: echoing the original answer must fail.
        (
            D2,
            "The answer is 21.",
            None,
            "21",
            false,
            MatchedOriginalOnCounterfactual,
        ),
        (
            D3,
            "I get 21",
            None,
            "21",
            false,
            MatchedOriginalOnCounterfactual,
        ),
        (
            D2,
            "21.0",
            None,
            "21",
            false,
            MatchedOriginalOnCounterfactual,
        ),
        (
            D3,
            "\\boxed{21}",
            None,
            "21",
            false,
            MatchedOriginalOnCounterfactual,
        ),
        // ...a changed answer passes...
        (
            D2,
            "The answer is 22.",
            None,
            "21",
            true,
            DifferedFromOriginal,
        ),
        (D3, "Answer: 35", None, "21", true, DifferedFromOriginal),
        (D2, "-21", None, "21", true, DifferedFromOriginal),
        // ...and declaring the problem unsolvable passes.
        (
            D2,
            "This cannot be determined from the given information.",
            None,
            "21",
            true,
            DeclaredUnsolvable,
        ),
        (
            D3,
            "There is not enough information.",
            None,
            "21",
            true,
            DeclaredUnsolvable,
        ),
        (
            D3,
            "The problem is unsolvable.",
            None,
            "21",
            true,
            DeclaredUnsolvable,
        ),
        (
            D2,
            "insufficient information to answer",
            None,
            "48",
            true,
            DeclaredUnsolvable,
        ),
        (
            D3,
            "It could be 21 or 22; no unique answer exists.",
            None,
            "21",
            true,
            DeclaredUnsolvable,
        ),
        (
            D2,
            "could be anything, impossible to determine",
            None,
            "7",
            true,
            DeclaredUnsolvable,
        ),
        // Comprehension rewrites grade against the original answer, so an
        // echo passes there.
        (
            D1,
            "The answer is 21.",
            Some("21"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D4,
            "I think it's 21",
            Some("21"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D1,
            "The answer is 20.",
            Some("21"),
            "21",
            false,
            MismatchedReference,
        ),
        (
            D4,
            "cannot be determined",
            Some("21"),
            "21",
            false,
            MismatchedReference,
        ),
        (D1, "#### 21", Some("21"), "21", true, MatchedReference),
        (D1, "\\boxed{21}", Some("21"), "21", true, MatchedReference),
        (
            D1,
            "After rounding, roughly 21ish... final answer: 21",
            Some("21"),
            "21",
            true,
            MatchedReference,
        ),
        // Solving/summarization inquiries grade against the agent reference.
        (
            D5,
            "Answer: 50",
            Some("Working through it.\nAnswer: 50"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D6,
            "The total is 105.",
            Some("Answer: 105"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D7,
            "Answer: 12",
            Some("Answer: 13"),
            "21",
            false,
            MismatchedReference,
        ),
        (
            D8,
            "The intermediate value is 50.",
            Some("The step gives 50."),
            "21",
            true,
            MatchedReference,
        ),
        (D5, "1/2", Some("Answer: 0.5"), "21", true, MatchedReference),
        (
            D6,
            "Answer: 1,200",
            Some("1200"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D7,
            "It is \\boxed{\\frac{3}{4}}.",
            Some("Answer: 3/4"),
            "21",
            true,
            MatchedReference,
        ),
        (
            D8,
            "no idea",
            Some("Answer: 7"),
            "21",
            false,
            MismatchedReference,
        ),
        (
            D9,
            "alpha = 100",
            Some("100"),
            "250",
            true,
            MatchedReference,
        ),
        (
            D9,
            "The masked value is 99.",
            Some("100"),
            "250",
            false,
            MismatchedReference,
        ),
    ];
    assert_eq!(
        cases.len(),
        30,
        "fixture must stay at 30 hand-labeled cases"
    );

    let mut disagreements = Vec::new();
    for (i, (dim, response, reference, original, want_passed, want_reason)) in
        cases.iter().enumerate()
    {
        let got = judge_pass(*dim, response, *reference, original).unwrap();
        if got.passed != *want_passed || got.reason != *want_reason {
            disagreements.push(format!(
                "case {i} ({dim}, {response:?}): got ({}, {:?}), labeled ({want_passed}, {want_reason:?})",
                got.passed, got.reason
            ));
        }
    }
    assert!(
        disagreements.is_empty(),
        "{}/30 disagreements:\n{}",
        disagreements.len(),
        disagreements.join("\n")
    );
    println!("criterion 6 PASS: 30/30 hand-labeled counterfactual grading outcomes agree");
}

// ---------------------------------------------------------------------------
// 7. End-to-end determinism and resume
// ---------------------------------------------------------------------------

fn e2e_problems() -> Vec<Problem> {
    (0..5)
        .map(|i| {
            let mut p = Problem::new(
                format!("e2e/{i}"),
                format!(
                    "A farm packs {} crates, each crate holds {} melons. \
                     How many melons are packed in total?",
                    i + 2,
                    i + 3
                ),
                format!("{}", (i + 2) * (i + 3)),
                "e2e",
            );
            p.solution = Some(format!(
                "Multiply {} by {}. The answer is {}.",
                i + 2,
                i + 3,
                (i + 2) * (i + 3)
            ));
            p.difficulty = Some((i % 3) as u8 + 1);
            p
        })
        .collect()
}

fn e2e_agent() -> BackendDescriptor {
    let mut rules = vec![ScriptRule::simple(
        "This review is for dimension",
        "ACCEPT faithful",
    )];
    for dim in Dimension::ALL {
        let respond = if dim == Dimension::D9 {
            format!("Masked variant for {dim} with alpha.\n[21]")
        } else {
            format!("Variant question for {dim}: solve it.")
        };
        rules.push(ScriptRule::simple(
            format!("This request is for dimension {dim}"),
            respond,
        ));
        rules.push(ScriptRule::simple(
            format!("This reference request is for dimension {dim}"),
            "Working through it.\nAnswer: 50",
        ));
    }
    BackendDescriptor::scripted_named("agent", rules)
}

fn e2e_target() -> BackendDescriptor {
    BackendDescriptor::scripted_named(
        "target",
        vec![
            ScriptRule::simple("Variant question for D", "Answer: 50"),
            ScriptRule::simple("Masked variant for D9", "alpha = 21"),
            ScriptRule::simple("", "The answer is 12."),
        ],
    )
}

/// Runs the full chain; `generate_problems`/`evaluate_problems` control how
/// much of the dataset each phase sees (to emulate an interrupted run).
fn run_chain(
    dir: &Path,
    problems: &[Problem],
    generate_slices: &[usize],
    evaluate_slices: &[usize],
) -> (RunPaths, u64, u64) {
    let paths = RunPaths::new(dir);
    let templates = TemplateSet::embedded();
    let mut config = EngineConfig::new(e2e_agent());
    config.seed = 7;
    let options = GenerateOptions {
        dimensions: Dimension::ALL.to_vec(),
        concurrency: 4,
    };
    let mut agent_calls = 0;
    for &upto in generate_slices {
        let gateway = Gateway::new(4);
        let summary = run_generate(
            &problems[..upto],
            &config,
            &options,
            &gateway,
            &templates,
            &paths,
        )
        .unwrap();
        agent_calls = summary.gateway_calls;
    }
    let mut eval = EvaluateOptions::new(e2e_target());
    eval.concurrency = 4;
    eval.seed = 7;
    let mut target_calls = 0;
    for &upto in evaluate_slices {
        let gateway = Gateway::new(4);
        let summary = run_evaluate(&problems[..upto], &eval, &gateway, &paths).unwrap();
        target_calls = summary.target_calls;
    }
    run_report("e2e", Some(problems), StageAggregation::Conjunction, &paths).unwrap();
    (paths, agent_calls, target_calls)
}

fn chain_files(paths: &RunPaths) -> Vec<(PathBuf, Vec<u8>)> {
    [
        paths.suites(),
        paths.records(),
        paths.gateway_log(),
        paths.report_json(),
        paths.report_text(),
    ]
    .into_iter()
    .map(|p| {
        let bytes = std::fs::read(&p).unwrap();
        (p, bytes)
    })
    .collect()
}

#[test]
fn criterion_7_end_to_end_is_deterministic_and_resume_is_free() {
    let problems = e2e_problems();

    // Two clean executions of the same run.
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (paths_a, ..) = run_chain(dir_a.path(), &problems, &[5], &[5]);
    let (paths_b, ..) = run_chain(dir_b.path(), &problems, &[5], &[5]);
    for ((path, bytes_a), (_, bytes_b)) in
        chain_files(&paths_a).into_iter().zip(chain_files(&paths_b))
    {
        assert_eq!(
            bytes_a,
            bytes_b,
            "{} differs between identical executions",
            path.file_name().unwrap().to_string_lossy()
        );
    }

    // Interrupted run: generate saw 2 problems, then the full 5; evaluate saw
    // 3, then the full 5. The final stores must equal the clean run's.
    let dir_c = tempfile::tempdir().unwrap();
    let (paths_c, ..) = run_chain(dir_c.path(), &problems, &[2, 5], &[3, 5]);
    for ((path, bytes_a), (_, bytes_c)) in
        chain_files(&paths_a).into_iter().zip(chain_files(&paths_c))
    {
        assert_eq!(
            bytes_a,
            bytes_c,
            "{} differs after interruption + resume",
            path.file_name().unwrap().to_string_lossy()
        );
    }

    // A rerun over the finished store issues zero backend calls.
    let (_, agent_calls, target_calls) = run_chain(dir_c.path(), &problems, &[5], &[5]);
    assert_eq!(agent_calls, 0, "resume re-issued agent calls");
    assert_eq!(target_calls, 0, "resume re-issued target calls");

    println!(
        "criterion 7 PASS: 5-problem scripted chain is byte-identical across executions and \
         across interruption; reruns issue zero backend calls"
    );
}

// ---------------------------------------------------------------------------
// 8. Dataset ingestion fixtures
// ---------------------------------------------------------------------------

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn criterion_8_dataset_fixtures_load_with_hand_extracted_answers() {
    // Hand-extracted from tests/fixtures/gsm8k_style.jsonl: the text after
    // each line's final "####".
    let gsm8k_expected = [
        "18", "3", "70000", "540", "20", "64", "260", "160", "45", "460",
    ];
    let problems = load_problems(&fixture("gsm8k_style.jsonl"), DatasetFormat::Gsm8kStyle).unwrap();
    assert_eq!(problems.len(), 10);
    for (i, (problem, want)) in problems.iter().zip(gsm8k_expected).enumerate() {
        assert_eq!(problem.answer, want, "line {}", i + 1);
        assert_eq!(problem.id, format!("gsm8k_style/{}", i + 1));
        assert_eq!(problem.source, "gsm8k_style");
        assert!(problem.solution.as_deref().unwrap().contains("####"));
    }

    // Hand-extracted from tests/fixtures/math_style.jsonl: each line's last
    // boxed expression, with level and type alongside.
    let math_expected: [(&str, u8, &str); 10] = [
        (r"\frac{1}{2}", 1, "Prealgebra"),
        ("12", 1, "Algebra"),
        ("7", 2, "Number Theory"), // two boxed values; the later one wins
        (r"3\sqrt{2}", 3, "Algebra"),
        ("-4", 1, "Prealgebra"),
        ("0.6", 2, "Prealgebra"),
        (r"\frac{7}{12}", 3, "Prealgebra"),
        ("120", 2, "Counting & Probability"),
        ("11", 5, "Number Theory"),
        ("2x+3", 4, "Algebra"),
    ];
    let problems = load_problems(&fixture("math_style.jsonl"), DatasetFormat::MathStyle).unwrap();
    assert_eq!(problems.len(), 10);
    for (i, (problem, (answer, level, subject))) in problems.iter().zip(math_expected).enumerate() {
        assert_eq!(problem.answer, answer, "line {}", i + 1);
        assert_eq!(problem.difficulty, Some(level), "line {}", i + 1);
        assert_eq!(problem.subject.as_deref(), Some(subject), "line {}", i + 1);
    }

    // Malformed inputs surface the documented errors.
    let dir = tempfile::tempdir().unwrap();
    let no_marker = dir.path().join("no_marker.jsonl");
    std::fs::write(
        &no_marker,
        "{\"question\": \"q\", \"answer\": \"just text\"}\n",
    )
    .unwrap();
    assert!(matches!(
        load_problems(&no_marker, DatasetFormat::Gsm8kStyle),
        Err(DatasetError::MissingAnswer { line: 1 })
    ));
    let no_box = dir.path().join("no_box.jsonl");
    std::fs::write(
        &no_box,
        "{\"problem\": \"p\", \"solution\": \"plain words\"}\n",
    )
    .unwrap();
    assert!(matches!(
        load_problems(&no_box, DatasetFormat::MathStyle),
        Err(DatasetError::MissingAnswer { line: 1 })
    ));
    let dup = dir.path().join("dup.jsonl");
    std::fs::write(
        &dup,
        concat!(
            "{\"id\": \"x\", \"problem\": \"a\", \"answer\": \"1\"}\n",
            "{\"id\": \"x\", \"problem\": \"b\", \"answer\": \"2\"}\n"
        ),
    )
    .unwrap();
    assert!(matches!(
        load_problems(&dup, DatasetFormat::GenericJsonl),
        Err(DatasetError::DuplicateId { line: 2, .. })
    ));

    println!(
        "criterion 8 PASS: 10/10 marker-delimited and 10/10 boxed answers match hand extraction; \
         malformed lines raise the documented errors"
    );
}

// ---------------------------------------------------------------------------
// 9. Equal-frequency binning
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_equal_frequency_bins_partition_with_balanced_sizes() {
    let mut rng = StdRng::seed_from_u64(9);
    for (n, want_sizes) in [
        (10usize, vec![2, 2, 2, 2, 2]),
        (11, vec![3, 2, 2, 2, 2]),
        (23, vec![5, 5, 5, 4, 4]),
    ] {
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let bins = equal_frequency_bins(&values, 5).unwrap();

        let sizes: Vec<usize> = bins.iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, want_sizes, "n = {n}");
        // The ceil/floor rule, restated from scratch.
        let (big, small) = (n.div_ceil(5), n / 5);
        assert!(sizes.iter().all(|&s| s == big || s == small), "n = {n}");

        // The bins partition the input: every index exactly once.
        let mut seen: Vec<usize> = bins
            .iter()
            .flat_map(|b| b.indices.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>(), "n = {n}");

        // Bin bounds hold their members and ascend.
        for bin in &bins {
            assert!(bin
                .indices
                .iter()
                .all(|&i| values[i] >= bin.lower && values[i] <= bin.upper));
        }
        for pair in bins.windows(2) {
            assert!(pair[0].upper <= pair[1].lower, "n = {n}");
        }
    }
    println!(
        "criterion 9 PASS: sizes [2,2,2,2,2], [3,2,2,2,2], [5,5,5,4,4] for n = 10, 11, 23 \
         and every input lands in exactly one bin"
    );
}
