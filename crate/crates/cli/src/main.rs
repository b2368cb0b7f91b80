//! Command-line entry points for the mastery probe: `generate` builds
//! inquiry suites, `evaluate` runs a target model over them, `report`
//! aggregates the stored records into metric tables.
//!
//! Exit codes: 0 success, 2 configuration error, 3 dataset error, 4 total
//! backend failure (every backend call failed), 1 anything else.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mathprobe::dataset::{load_problems, DatasetError, DatasetFormat};
use mathprobe::domain::{Dimension, Problem, PromptMode};
use mathprobe::engine::{EngineConfig, DEFAULT_MAX_ITERATIONS};
use mathprobe::gateway::{BackendDescriptor, Gateway, ScriptRule};
use mathprobe::grader::UnsolvableLexicon;
use mathprobe::metrics::StageAggregation;
use mathprobe::pipeline::{
    load_demo_pool, run_evaluate, run_generate, run_report, EvaluateOptions, GenerateOptions,
    PipelineError, RunPaths,
};
use mathprobe::prompts::TemplateSet;

/// Writes a line to stdout, ignoring write failures such as a closed pipe
/// (`mathprobe ... | head` must not abort the run).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Like [`out!`] without the trailing newline.
macro_rules! out_raw {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "mathprobe",
    about = "Nine-dimension mastery probe for math-solving language models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist inquiry suites for every problem in a dataset.
    Generate(GenerateArgs),
    /// Query a target model on vanilla problems and generated inquiries.
    Evaluate(EvaluateArgs),
    /// Aggregate persisted records into report.json and report.txt.
    Report(ReportArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Problem file (JSON lines).
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset layout: generic-jsonl, gsm8k, or math.
    #[arg(long, default_value = "generic-jsonl")]
    format: String,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Dimensions to build, e.g. "1,3,9" or "D1,D3,D9" (default: all nine).
    #[arg(long)]
    dimensions: Option<String>,
    /// Agent model: a remote model name, or "scripted:<rules.json>".
    #[arg(long)]
    agent_model: String,
    /// Chat-completions URL of the agent backend (remote models).
    #[arg(long)]
    agent_endpoint: Option<String>,
    /// Environment variable holding the agent backend's bearer token.
    #[arg(long)]
    agent_auth_env: Option<String>,
    /// Review-loop budget per inquiry before marking a dimension unsuitable.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: u32,
    /// Run seed for the deterministic pieces.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel problems in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Output directory for the run's stores.
    #[arg(long)]
    out: PathBuf,
    /// Directory of prompt templates overriding the built-in set.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Target model: a remote model name, or "scripted:<rules.json>".
    #[arg(long)]
    target_model: String,
    /// Chat-completions URL of the target backend (remote models).
    #[arg(long)]
    target_endpoint: Option<String>,
    /// Environment variable holding the target backend's bearer token.
    #[arg(long)]
    target_auth_env: Option<String>,
    /// Prompt presentation: plain, cot, or icl.
    #[arg(long, default_value = "plain")]
    mode: String,
    /// Demonstration pool (JSON lines); required in icl mode.
    #[arg(long)]
    demo_pool: Option<PathBuf>,
    /// Run seed (drives demonstration selection).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel problems in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Run directory holding suites.jsonl; records are written here too.
    #[arg(long)]
    out: PathBuf,
    /// File of unsolvable-claim phrases overriding the built-in lexicon.
    #[arg(long)]
    unsolvable_phrases: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding records.jsonl; reports are written here.
    #[arg(long)]
    out: PathBuf,
    /// Problem file; supplies difficulty/length metadata for the breakdowns.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Dataset layout, when --dataset is given.
    #[arg(long, default_value = "generic-jsonl")]
    format: String,
    /// Stage rate aggregation: conjunction or micro.
    #[arg(long, default_value = "conjunction")]
    stage_aggregation: String,
    /// Dataset label printed in the report (default: dataset file stem).
    #[arg(long)]
    label: Option<String>,
}

/// A failure annotated with the exit code it maps to.
enum CliError {
    /// Bad flags or unusable configuration (exit 2).
    Config(String),
    /// Problem file failed to load (exit 3).
    Dataset(DatasetError),
    /// Every backend call failed (exit 4).
    TotalBackendFailure(String),
    /// Anything else (exit 1).
    Other(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> CliError {
        match e {
            PipelineError::Dataset(e) => CliError::Dataset(e),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Dataset(_) => ExitCode::from(3),
            CliError::TotalBackendFailure(_) => ExitCode::from(4),
            CliError::Other(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("configuration error: {m}"),
            CliError::Dataset(e) => format!("dataset error: {e}"),
            CliError::TotalBackendFailure(m) => format!("total backend failure: {m}"),
            CliError::Other(m) => m.clone(),
        }
    }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

/// Builds a backend from a model flag. `scripted:<file>` loads match rules
/// from a JSON file (named after its stem); anything else is a remote model
/// and needs an endpoint. Credentials are only ever named, never passed:
/// `auth_env` is the environment variable the gateway reads at call time.
fn parse_backend(
    flag: &str,
    model: &str,
    endpoint: Option<&str>,
    auth_env: Option<&str>,
) -> Result<BackendDescriptor, CliError> {
    if let Some(rules_path) = model.strip_prefix("scripted:") {
        let path = Path::new(rules_path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{flag}: cannot read {rules_path}: {e}")))?;
        let rules: Vec<ScriptRule> = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{flag}: bad rules file {rules_path}: {e}")))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scripted".to_string());
        return Ok(BackendDescriptor::scripted_named(name, rules));
    }
    match endpoint {
        Some(endpoint) => Ok(BackendDescriptor::remote(
            model,
            endpoint,
            auth_env.map(str::to_string),
        )),
        None => Err(config_err(format!(
            "{flag} {model:?} is remote and needs --{}-endpoint",
            flag.trim_start_matches("--").trim_end_matches("-model")
        ))),
    }
}

fn parse_dimensions(spec: Option<&str>) -> Result<Vec<Dimension>, CliError> {
    let Some(spec) = spec else {
        return Ok(Dimension::ALL.to_vec());
    };
    let mut set = BTreeSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let dim: Dimension = part
            .parse()
            .map_err(|e| config_err(format!("--dimensions: {e}")))?;
        set.insert(dim);
    }
    if set.is_empty() {
        return Err(config_err("--dimensions lists no dimensions"));
    }
    Ok(set.into_iter().collect())
}

fn parse_format(format: &str) -> Result<DatasetFormat, CliError> {
    format
        .parse()
        .map_err(|e: String| config_err(format!("--format: {e}")))
}

fn parse_mode(mode: &str) -> Result<PromptMode, CliError> {
    mode.parse()
        .map_err(|e: String| config_err(format!("--mode: {e}")))
}

fn load_dataset(args: &DatasetArgs) -> Result<Vec<Problem>, CliError> {
    let format = parse_format(&args.format)?;
    load_problems(&args.dataset, format).map_err(CliError::Dataset)
}

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "records".to_string())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    if args.max_iterations < 1 {
        return Err(config_err("--max-iterations must be at least 1"));
    }
    if args.concurrency < 1 {
        return Err(config_err("--concurrency must be at least 1"));
    }
    let dimensions = parse_dimensions(args.dimensions.as_deref())?;
    let backend = parse_backend(
        "--agent-model",
        &args.agent_model,
        args.agent_endpoint.as_deref(),
        args.agent_auth_env.as_deref(),
    )?;
    let templates = match &args.prompts {
        Some(dir) => {
            TemplateSet::from_dir(dir).map_err(|e| config_err(format!("--prompts: {e}")))?
        }
        None => TemplateSet::embedded(),
    };
    let problems = load_dataset(&args.dataset)?;

    let mut config = EngineConfig::new(backend);
    config.max_iterations = args.max_iterations;
    config.seed = args.seed;
    let options = GenerateOptions {
        dimensions,
        concurrency: args.concurrency,
    };
    let gateway = Gateway::new(args.concurrency);
    let paths = RunPaths::new(&args.out);

    let summary = run_generate(&problems, &config, &options, &gateway, &templates, &paths)?;

    out!(
        "generate: {} problem(s), {} inquiry(ies) built, {} already stored, {} agent call(s)",
        summary.problems, summary.attempted, summary.skipped_existing, summary.gateway_calls
    );
    out!(
        "{:<36} {:>9} {:>10} {:>7}",
        "dimension", "generated", "unsuitable", "failed"
    );
    for (dim, tally) in &summary.per_dimension {
        out!(
            "  {:<34} {:>9} {:>10} {:>7}",
            format!("{dim} {}", dim.label()),
            tally.generated,
            tally.unsuitable,
            tally.failed
        );
    }
    out!("suites: {}", paths.suites().display());

    if summary.total_backend_failure() {
        return Err(CliError::TotalBackendFailure(format!(
            "all {} agent-built inquiry(ies) failed",
            summary.failed()
        )));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    if args.concurrency < 1 {
        return Err(config_err("--concurrency must be at least 1"));
    }
    let mode = parse_mode(&args.mode)?;
    let demos = match (&args.demo_pool, mode) {
        (Some(path), _) => load_demo_pool(path).map_err(CliError::Dataset)?,
        (None, PromptMode::Icl) => {
            return Err(config_err("--mode icl requires --demo-pool"));
        }
        (None, _) => Vec::new(),
    };
    let lexicon = match &args.unsolvable_phrases {
        Some(path) => Some(
            UnsolvableLexicon::from_path(path)
                .map_err(|e| config_err(format!("--unsolvable-phrases: {e}")))?,
        ),
        None => None,
    };
    let target = parse_backend(
        "--target-model",
        &args.target_model,
        args.target_endpoint.as_deref(),
        args.target_auth_env.as_deref(),
    )?;
    let problems = load_dataset(&args.dataset)?;

    let options = EvaluateOptions {
        target,
        mode,
        demos,
        seed: args.seed,
        concurrency: args.concurrency,
        lexicon,
    };
    let gateway = Gateway::new(args.concurrency);
    let paths = RunPaths::new(&args.out);

    let summary = run_evaluate(&problems, &options, &gateway, &paths)?;

    out!(
        "evaluate: {} record(s) written, {} already stored, {} outcome(s) graded, {} skipped",
        summary.records_written,
        summary.skipped_existing,
        summary.outcomes_graded,
        summary.outcomes_skipped
    );
    out!(
        "target calls: {} ({} failed)",
        summary.target_calls, summary.target_errors
    );
    out!("records: {}", paths.records().display());

    if summary.total_backend_failure() {
        return Err(CliError::TotalBackendFailure(format!(
            "all {} target call(s) failed",
            summary.target_errors
        )));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let stage_aggregation: StageAggregation = args
        .stage_aggregation
        .parse()
        .map_err(|e: String| config_err(format!("--stage-aggregation: {e}")))?;
    let problems = match &args.dataset {
        Some(path) => {
            let format = parse_format(&args.format)?;
            Some(load_problems(path, format).map_err(CliError::Dataset)?)
        }
        None => None,
    };
    let label = args
        .label
        .clone()
        .or_else(|| args.dataset.as_deref().map(dataset_label))
        .unwrap_or_else(|| "records".to_string());
    let paths = RunPaths::new(&args.out);

    let (_, text) = run_report(&label, problems.as_deref(), stage_aggregation, &paths)?;
    out_raw!("{text}");
    out!(
        "written: {} and {}",
        paths.report_json().display(),
        paths.report_text().display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
