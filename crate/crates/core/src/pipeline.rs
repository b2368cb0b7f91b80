//! Run orchestration: the generate → evaluate → report phases over JSONL
//! stores in an output directory.
//!
//! Each phase is resumable: before doing work it reloads its store and skips
//! keys that are already persisted, so an interrupted run continues where it
//! stopped and a finished run is a no-op (issuing zero backend calls).
//!
//! Concurrency never reorders output. Problems are fanned out to a worker
//! pool, but results are buffered and committed strictly in problem order,
//! which keeps every store file byte-identical across runs regardless of the
//! concurrency limit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError};
use crate::domain::{
    Dimension, EvaluationRecord, Inquiry, InquiryStatus, MetricsReport, PassOutcome, Problem,
    PromptMode,
};
use crate::engine::{build_entry, fnv1a64, problem_seed, EngineConfig};
use crate::gateway::{BackendDescriptor, CallLog, CallRecord, Gateway};
use crate::grader::{default_lexicon, grade_vanilla_with, judge_pass_with, UnsolvableLexicon};
use crate::metrics::{MetricsError, StageAggregation};
use crate::prompts::{augment, Demonstration, TemplateSet};
use crate::report::{build_report, render_text};

/// Decoding temperature for the model under evaluation.
pub const TARGET_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no generated suites found at {0}; run the generate phase first")]
    MissingSuites(PathBuf),
}

// ---------------------------------------------------------------------------
// Output layout
// ---------------------------------------------------------------------------

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths {
            out_dir: out_dir.into(),
        }
    }

    /// Creates the output directory if needed.
    pub fn ensure(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.out_dir)
    }

    pub fn suites(&self) -> PathBuf {
        self.out_dir.join("suites.jsonl")
    }

    pub fn records(&self) -> PathBuf {
        self.out_dir.join("records.jsonl")
    }

    pub fn gateway_log(&self) -> PathBuf {
        self.out_dir.join("gateway_log.jsonl")
    }

    pub fn report_json(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }
}

/// Store key of one suite line: `problem_id::dimension`.
pub fn suite_key(problem_id: &str, dimension: Dimension) -> String {
    format!("{problem_id}::{dimension}")
}

/// Store key of one record line: `problem_id::target_model::mode`.
pub fn record_key(problem_id: &str, target_model: &str, mode: PromptMode) -> String {
    format!("{problem_id}::{target_model}::{mode}")
}

/// One line of `suites.jsonl`: the inquiry plus the run seed it was built
/// under, so a stored suite is reproducible without the original command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    #[serde(default)]
    pub seed: u64,
    pub inquiry: Inquiry,
}

impl SuiteEntry {
    pub fn key(&self) -> String {
        suite_key(&self.inquiry.problem_id, self.inquiry.dimension)
    }
}

/// One line of `gateway_log.jsonl`: a call record annotated with the problem
/// whose job issued it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCall {
    pub problem_id: String,
    #[serde(flatten)]
    pub call: CallRecord,
}

// ---------------------------------------------------------------------------
// Ordered worker pool
// ---------------------------------------------------------------------------

/// Runs `jobs` on up to `concurrency` threads, committing each result on the
/// calling thread in job order. Workers pull the next job index from a shared
/// counter; a reorder buffer holds results that finish early.
pub fn run_ordered<J, R>(
    jobs: &[J],
    concurrency: usize,
    mut commit: impl FnMut(usize, R) -> Result<(), PipelineError>,
) -> Result<(), PipelineError>
where
    J: Fn() -> R + Sync,
    R: Send,
{
    let workers = concurrency.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= jobs.len() {
                    break;
                }
                let result = jobs[index]();
                // A send error means the committer bailed; stop working.
                if tx.send((index, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer: BTreeMap<usize, R> = BTreeMap::new();
        let mut next_commit = 0usize;
        let mut failure = None;
        for (index, result) in rx {
            if failure.is_some() {
                continue; // drain so workers can finish
            }
            buffer.insert(index, result);
            while let Some(ready) = buffer.remove(&next_commit) {
                if let Err(e) = commit(next_commit, ready) {
                    failure = Some(e);
                    break;
                }
                next_commit += 1;
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

// ---------------------------------------------------------------------------
// Generate phase
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Dimensions to build; defaults to all nine.
    pub dimensions: Vec<Dimension>,
    pub concurrency: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            dimensions: Dimension::ALL.to_vec(),
            concurrency: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DimensionTally {
    pub generated: u64,
    pub unsuitable: u64,
    pub failed: u64,
}

impl DimensionTally {
    pub fn total(&self) -> u64 {
        self.generated + self.unsuitable + self.failed
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GenerateSummary {
    /// Problems that had at least one missing dimension.
    pub problems: u64,
    /// Inquiries built this run.
    pub attempted: u64,
    /// Inquiries skipped because their key was already persisted.
    pub skipped_existing: u64,
    pub per_dimension: BTreeMap<Dimension, DimensionTally>,
    /// Agent calls dispatched this run.
    pub gateway_calls: u64,
}

impl GenerateSummary {
    fn tally_sum(&self, pick: impl Fn(&DimensionTally) -> u64) -> u64 {
        self.per_dimension.values().map(pick).sum()
    }

    pub fn generated(&self) -> u64 {
        self.tally_sum(|t| t.generated)
    }

    pub fn unsuitable(&self) -> u64 {
        self.tally_sum(|t| t.unsuitable)
    }

    pub fn failed(&self) -> u64 {
        self.tally_sum(|t| t.failed)
    }

    /// True when every inquiry that needed the agent backend failed — the
    /// signature of an unreachable or misconfigured backend. The rule-based
    /// disruption dimension needs no backend, so it is excluded.
    pub fn total_backend_failure(&self) -> bool {
        let agent_attempted: u64 = self
            .per_dimension
            .iter()
            .filter(|(dim, _)| **dim != Dimension::D2)
            .map(|(_, t)| t.total())
            .sum();
        let agent_failed: u64 = self
            .per_dimension
            .iter()
            .filter(|(dim, _)| **dim != Dimension::D2)
            .map(|(_, t)| t.failed)
            .sum();
        agent_attempted > 0 && agent_failed == agent_attempted
    }
}

/// Builds and persists inquiry suites for every problem, skipping
/// `(problem, dimension)` keys already in the store.
pub fn run_generate(
    problems: &[Problem],
    engine_config: &EngineConfig,
    options: &GenerateOptions,
    gateway: &Gateway,
    templates: &TemplateSet,
    paths: &RunPaths,
) -> Result<GenerateSummary, PipelineError> {
    paths.ensure()?;
    let existing = dataset::load_keyed_jsonl::<SuiteEntry, _>(&paths.suites(), SuiteEntry::key)?;

    struct JobSpec<'a> {
        problem: &'a Problem,
        dimensions: Vec<Dimension>,
    }
    let mut skipped_existing = 0u64;
    let specs: Vec<JobSpec> = problems
        .iter()
        .filter_map(|problem| {
            let missing: Vec<Dimension> = options
                .dimensions
                .iter()
                .copied()
                .filter(|&dim| !existing.contains_key(&suite_key(&problem.id, dim)))
                .collect();
            skipped_existing += (options.dimensions.len() - missing.len()) as u64;
            if missing.is_empty() {
                None
            } else {
                Some(JobSpec {
                    problem,
                    dimensions: missing,
                })
            }
        })
        .collect();

    let jobs: Vec<_> = specs
        .iter()
        .map(|spec| {
            move || {
                let mut log = CallLog::new();
                let entries: Vec<Inquiry> = spec
                    .dimensions
                    .iter()
                    .map(|&dim| {
                        build_entry(
                            spec.problem,
                            dim,
                            engine_config,
                            gateway,
                            templates,
                            &mut log,
                        )
                    })
                    .collect();
                (spec.problem.id.clone(), entries, log)
            }
        })
        .collect();

    let mut summary = GenerateSummary {
        problems: specs.len() as u64,
        skipped_existing,
        ..GenerateSummary::default()
    };
    let suites_path = paths.suites();
    let log_path = paths.gateway_log();
    run_ordered(
        &jobs,
        options.concurrency,
        |_, (problem_id, entries, log): (String, Vec<Inquiry>, CallLog)| {
            for inquiry in entries {
                let tally = summary.per_dimension.entry(inquiry.dimension).or_default();
                match inquiry.status {
                    InquiryStatus::Generated => tally.generated += 1,
                    InquiryStatus::Unsuitable => tally.unsuitable += 1,
                    InquiryStatus::Failed => tally.failed += 1,
                }
                summary.attempted += 1;
                dataset::append_jsonl(
                    &suites_path,
                    &SuiteEntry {
                        seed: engine_config.seed,
                        inquiry,
                    },
                )?;
            }
            for call in log.into_records() {
                summary.gateway_calls += 1;
                dataset::append_jsonl(
                    &log_path,
                    &LoggedCall {
                        problem_id: problem_id.clone(),
                        call,
                    },
                )?;
            }
            Ok(())
        },
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Evaluate phase
// ---------------------------------------------------------------------------

/// One line of an ICL demo-pool file. Entries tagged with a dimension are
/// preferred for that dimension's inquiries; untagged entries serve the
/// unmodified problem and any dimension without tagged entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoEntry {
    #[serde(default)]
    pub dimension: Option<Dimension>,
    pub question: String,
    pub answer: String,
}

/// Loads an ICL demo pool (JSONL, one demonstration per line).
pub fn load_demo_pool(path: &Path) -> Result<Vec<DemoEntry>, DatasetError> {
    dataset::load_jsonl(path)
}

/// Picks a demonstration for one prompt slot, deterministically from the
/// problem id and run seed. `dimension` is `None` for the vanilla prompt.
fn pick_demo<'a>(
    demos: &'a [DemoEntry],
    dimension: Option<Dimension>,
    problem_id: &str,
    seed: u64,
) -> Option<&'a DemoEntry> {
    if demos.is_empty() {
        return None;
    }
    let tagged: Vec<&DemoEntry> = demos.iter().filter(|d| d.dimension == dimension).collect();
    let pool = if !tagged.is_empty() {
        tagged
    } else {
        let untagged: Vec<&DemoEntry> = demos.iter().filter(|d| d.dimension.is_none()).collect();
        if untagged.is_empty() {
            demos.iter().collect()
        } else {
            untagged
        }
    };
    let slot = dimension
        .map(|d| d.to_string())
        .unwrap_or_else(|| "vanilla".to_string());
    let mut rng =
        ChaCha8Rng::seed_from_u64(problem_seed(problem_id, seed) ^ fnv1a64(slot.as_bytes()));
    Some(pool[rng.gen_range(0..pool.len())])
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub target: BackendDescriptor,
    pub mode: PromptMode,
    /// ICL demonstrations; ignored outside ICL mode.
    pub demos: Vec<DemoEntry>,
    /// Run seed; drives demo selection only.
    pub seed: u64,
    pub concurrency: usize,
    /// Unsolvable-claim phrases; defaults to the built-in lexicon.
    pub lexicon: Option<UnsolvableLexicon>,
}

impl EvaluateOptions {
    pub fn new(target: BackendDescriptor) -> EvaluateOptions {
        EvaluateOptions {
            target,
            mode: PromptMode::Plain,
            demos: Vec::new(),
            seed: 0,
            concurrency: 1,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvaluateSummary {
    /// Records written this run.
    pub records_written: u64,
    /// Problems skipped because their record key was already persisted.
    pub skipped_existing: u64,
    /// Dimension outcomes graded against a live response.
    pub outcomes_graded: u64,
    /// Dimension outcomes skipped (missing, unsuitable, failed, or errored).
    pub outcomes_skipped: u64,
    /// Target calls dispatched this run.
    pub target_calls: u64,
    /// Dispatched target calls that errored.
    pub target_errors: u64,
}

impl EvaluateSummary {
    /// True when every dispatched target call failed.
    pub fn total_backend_failure(&self) -> bool {
        self.target_calls > 0 && self.target_errors == self.target_calls
    }
}

/// Augments `text` per the prompt mode, queries the target, and grades the
/// response. Every failure (prompt augmentation, gateway, missing reference)
/// folds into a skipped outcome carrying the error; evaluation never aborts.
#[allow(clippy::too_many_arguments)]
fn target_outcome(
    problem: &Problem,
    dimension: Option<Dimension>,
    text: &str,
    reference: Option<&str>,
    options: &EvaluateOptions,
    gateway: &Gateway,
    lexicon: &UnsolvableLexicon,
    log: &mut CallLog,
) -> PassOutcome {
    let demo = pick_demo(&options.demos, dimension, &problem.id, options.seed);
    let demonstration = demo.map(|d| Demonstration {
        question: d.question.clone(),
        answer: d.answer.clone(),
    });
    let prompt = match augment(text, options.mode, demonstration.as_ref()) {
        Ok(prompt) => prompt,
        Err(e) => return PassOutcome::skipped(dimension, Some(e.to_string())),
    };
    let tag = match dimension {
        Some(dim) => format!("target:{dim}"),
        None => "target:vanilla".to_string(),
    };
    let request = options.target.request(prompt, TARGET_TEMPERATURE);
    let response = match gateway.complete(log, &tag, &request, &options.target) {
        Ok(response) => response,
        Err(e) => return PassOutcome::skipped(dimension, Some(e.to_string())),
    };
    match dimension {
        None => grade_vanilla_with(&response, &problem.answer, lexicon),
        Some(dim) => judge_pass_with(dim, &response, reference, &problem.answer, lexicon)
            .unwrap_or_else(|e| PassOutcome::skipped(dimension, Some(e.to_string()))),
    }
}

/// Evaluates one problem: the unmodified body plus every generated inquiry.
fn evaluate_problem(
    problem: &Problem,
    suite: Option<&BTreeMap<Dimension, SuiteEntry>>,
    options: &EvaluateOptions,
    gateway: &Gateway,
    lexicon: &UnsolvableLexicon,
    log: &mut CallLog,
) -> EvaluationRecord {
    let vanilla = target_outcome(
        problem,
        None,
        &problem.body,
        None,
        options,
        gateway,
        lexicon,
        log,
    );

    let mut per_dimension = BTreeMap::new();
    if let Some(suite) = suite {
        for (&dim, entry) in suite {
            let outcome = match entry.inquiry.status {
                InquiryStatus::Generated => target_outcome(
                    problem,
                    Some(dim),
                    &entry.inquiry.text,
                    entry.inquiry.reference_answer.as_deref(),
                    options,
                    gateway,
                    lexicon,
                    log,
                ),
                status => PassOutcome::skipped(
                    Some(dim),
                    Some(match &entry.inquiry.error {
                        Some(error) => format!("inquiry {status}: {error}"),
                        None => format!("inquiry {status}"),
                    }),
                ),
            };
            per_dimension.insert(dim, outcome);
        }
    }

    EvaluationRecord {
        problem_id: problem.id.clone(),
        vanilla,
        per_dimension,
        target_model: options.target.model.clone(),
        mode: options.mode,
    }
}

/// Queries the target model on every problem and inquiry, grades the
/// responses, and persists one record per problem. Problems whose record key
/// is already stored are skipped outright (no target calls).
pub fn run_evaluate(
    problems: &[Problem],
    options: &EvaluateOptions,
    gateway: &Gateway,
    paths: &RunPaths,
) -> Result<EvaluateSummary, PipelineError> {
    paths.ensure()?;
    let suites = dataset::load_keyed_jsonl::<SuiteEntry, _>(&paths.suites(), SuiteEntry::key)?;
    if suites.is_empty() {
        return Err(PipelineError::MissingSuites(paths.suites()));
    }
    let mut by_problem: BTreeMap<String, BTreeMap<Dimension, SuiteEntry>> = BTreeMap::new();
    for entry in suites.into_values() {
        by_problem
            .entry(entry.inquiry.problem_id.clone())
            .or_default()
            .insert(entry.inquiry.dimension, entry);
    }

    let existing = dataset::load_keyed_jsonl::<EvaluationRecord, _>(&paths.records(), |r| {
        record_key(&r.problem_id, &r.target_model, r.mode)
    })?;
    let lexicon = options
        .lexicon
        .clone()
        .unwrap_or_else(|| default_lexicon().clone());

    let mut skipped_existing = 0u64;
    let pending: Vec<&Problem> = problems
        .iter()
        .filter(|p| {
            let done =
                existing.contains_key(&record_key(&p.id, &options.target.model, options.mode));
            skipped_existing += u64::from(done);
            !done
        })
        .collect();

    let by_problem = &by_problem;
    let lexicon_ref = &lexicon;
    let jobs: Vec<_> = pending
        .iter()
        .map(|&problem| {
            move || {
                let mut log = CallLog::new();
                let record = evaluate_problem(
                    problem,
                    by_problem.get(&problem.id),
                    options,
                    gateway,
                    lexicon_ref,
                    &mut log,
                );
                (record, log)
            }
        })
        .collect();

    let mut summary = EvaluateSummary {
        skipped_existing,
        ..EvaluateSummary::default()
    };
    let records_path = paths.records();
    let log_path = paths.gateway_log();
    run_ordered(
        &jobs,
        options.concurrency,
        |_, (record, log): (EvaluationRecord, CallLog)| {
            for outcome in record.per_dimension.values() {
                if outcome.reason == crate::domain::PassReason::Skipped {
                    summary.outcomes_skipped += 1;
                } else {
                    summary.outcomes_graded += 1;
                }
            }
            for call in log.into_records() {
                summary.target_calls += 1;
                summary.target_errors += u64::from(call.error.is_some());
                dataset::append_jsonl(
                    &log_path,
                    &LoggedCall {
                        problem_id: record.problem_id.clone(),
                        call,
                    },
                )?;
            }
            dataset::append_jsonl(&records_path, &record)?;
            summary.records_written += 1;
            Ok(())
        },
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Report phase
// ---------------------------------------------------------------------------

/// Aggregates the records store into a report, writing `report.json` and
/// `report.txt` under the run directory and returning the report plus its
/// text rendering. Records are deduplicated last-write-wins by store key and
/// aggregated in key order.
pub fn run_report(
    dataset_label: &str,
    problems: Option<&[Problem]>,
    stage_aggregation: StageAggregation,
    paths: &RunPaths,
) -> Result<(MetricsReport, String), PipelineError> {
    paths.ensure()?;
    let keyed = dataset::load_keyed_jsonl::<EvaluationRecord, _>(&paths.records(), |r| {
        record_key(&r.problem_id, &r.target_model, r.mode)
    })?;
    let records: Vec<EvaluationRecord> = keyed.into_values().collect();
    let report = build_report(dataset_label, &records, problems, stage_aggregation)?;
    let mut json =
        serde_json::to_string_pretty(&report).map_err(|e| DatasetError::Encode(e.to_string()))?;
    json.push('\n');
    std::fs::write(paths.report_json(), json)?;
    let text = render_text(&report);
    std::fs::write(paths.report_text(), &text)?;
    Ok((report, text))
}
