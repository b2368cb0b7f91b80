//! Inquiry generation: a draft agent proposes a probing inquiry, a judge
//! agent accepts or rejects it, and rejected drafts are regenerated up to an
//! iteration budget. D2 is produced by a seeded rule instead of agents, and
//! each accepted inquiry is paired with a reference answer.

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::domain::{
    Dimension, Inquiry, InquiryStatus, InquirySuite, JudgeVerdict, Problem, TraceStep,
};
use crate::gateway::{BackendDescriptor, CallLog, Gateway, GatewayError};
use crate::prompts::{render, AgentRole, Bindings, PromptError, TemplateSet};

/// Default iteration budget for the generate-and-review loop.
pub const DEFAULT_MAX_ITERATIONS: u32 = 10;

/// Sampling temperature for the drafting agent (diversity across retries).
pub const INQUIRY_TEMPERATURE: f64 = 0.7;
/// Judge and reference agents run deterministically.
pub const JUDGE_TEMPERATURE: f64 = 0.0;
pub const REFERENCE_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dimension {0} is rule-based and has no generation loop")]
    RuleBasedDimension(Dimension),
    #[error("inquiry for {dimension} has status {status:?}, not Generated")]
    NotGenerated {
        dimension: Dimension,
        status: InquiryStatus,
    },
    #[error("no reference answer for {dimension}: {detail}")]
    ReferenceUnparseable {
        dimension: Dimension,
        detail: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Settings for inquiry generation.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Backend answering the drafting, judging, and reference agents.
    pub agent_backend: BackendDescriptor,
    /// Iteration budget per inquiry; after this many rejections the problem
    /// is marked unsuitable for the dimension. Values below 1 act as 1.
    pub max_iterations: u32,
    /// Run seed, mixed with each problem id for per-problem determinism.
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(agent_backend: BackendDescriptor) -> EngineConfig {
        EngineConfig {
            agent_backend,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// FNV-1a, fixed here so seeds never depend on the standard library's hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic per-problem seed: same (problem, run seed) → same randomness
/// regardless of evaluation order or concurrency.
pub fn problem_seed(problem_id: &str, run_seed: u64) -> u64 {
    fnv1a64(problem_id.as_bytes()) ^ run_seed
}

// ---------------------------------------------------------------------------
// D2: rule-based sentence disruption
// ---------------------------------------------------------------------------

/// Clause delimiters for sentence disruption.
pub const CLAUSE_DELIMITERS: [char; 6] = ['.', ',', ';', ':', '?', '!'];

/// Shuffles the words inside each clause of `body`, leaving the clause
/// delimiters and the word multiset of every clause unchanged.
///
/// Clauses are maximal delimiter-free runs; words are whitespace-separated
/// tokens. Each multi-word clause is reshuffled (up to 10 draws) until its
/// word order differs from the original, so the output reads as scrambled
/// rather than accidentally intact. Deterministic in (body, seed).
pub fn disrupt_sentences(body: &str, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(body.len());
    let mut clause = String::new();

    let flush = |clause: &mut String, out: &mut String, rng: &mut ChaCha8Rng| {
        let original: Vec<&str> = clause.split_whitespace().collect();
        if !original.is_empty() {
            let mut tokens = original.clone();
            if tokens.len() >= 2 {
                for _ in 0..10 {
                    tokens.shuffle(rng);
                    if tokens != original {
                        break;
                    }
                }
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&tokens.join(" "));
        }
        clause.clear();
    };

    for ch in body.chars() {
        if CLAUSE_DELIMITERS.contains(&ch) {
            flush(&mut clause, &mut out, &mut rng);
            out.push(ch);
        } else {
            clause.push(ch);
        }
    }
    flush(&mut clause, &mut out, &mut rng);
    out
}

// ---------------------------------------------------------------------------
// Generation loop
// ---------------------------------------------------------------------------

fn base_bindings(problem: &Problem) -> Bindings {
    let solution = problem.solution.clone().unwrap_or_else(|| {
        format!(
            "No worked solution is available. The final answer is {}.",
            problem.answer
        )
    });
    let mut bindings = Bindings::new();
    bindings.insert("problem".into(), problem.body.clone());
    bindings.insert("solution".into(), solution);
    bindings.insert("answer".into(), problem.answer.clone());
    bindings
}

/// Splits a judge reply into verdict and rationale. Only a leading
/// ACCEPT/ACCEPTED (any case, punctuation ignored) accepts; anything else —
/// including replies that name no verdict — rejects, so unparseable judge
/// output can never wave a candidate through.
fn parse_verdict(reply: &str) -> (JudgeVerdict, String) {
    let trimmed = reply.trim();
    let first = trimmed.split_whitespace().next().unwrap_or("");
    let word: String = first.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    let verdict = if word.eq_ignore_ascii_case("accept") || word.eq_ignore_ascii_case("accepted") {
        JudgeVerdict::Accepted
    } else {
        JudgeVerdict::Rejected
    };
    let rationale = trimmed.strip_prefix(first).unwrap_or(trimmed).trim();
    let rationale = if rationale.is_empty() {
        trimmed
    } else {
        rationale
    };
    (verdict, rationale.to_string())
}

/// Runs the draft-review loop for one agent-generated dimension.
///
/// Returns a `Generated` inquiry as soon as the judge accepts a draft, or an
/// `Unsuitable` one after `max_iterations` rejections. The reference answer
/// is left unset; see [`reference_answer`]. D2 errors — it has no loop.
pub fn generate_inquiry(
    problem: &Problem,
    dimension: Dimension,
    config: &EngineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    log: &mut CallLog,
) -> Result<Inquiry, EngineError> {
    if dimension == Dimension::D2 {
        return Err(EngineError::RuleBasedDimension(dimension));
    }
    let inquiry_template = templates.require(dimension, AgentRole::Inquiry)?;
    let judge_template = templates.require(dimension, AgentRole::Judge)?;
    let mut bindings = base_bindings(problem);
    let inquiry_prompt = render(inquiry_template, &bindings)?;
    let backend = &config.agent_backend;
    let budget = config.max_iterations.max(1);

    let mut trace = Vec::new();
    for iteration in 1..=budget {
        let candidate = gateway
            .complete(
                log,
                &format!("inquiry:{dimension}"),
                &backend.request(inquiry_prompt.clone(), INQUIRY_TEMPERATURE),
                backend,
            )?
            .trim()
            .to_string();
        if candidate.is_empty() {
            trace.push(TraceStep {
                candidate,
                verdict: JudgeVerdict::Rejected,
                rationale: "draft agent returned an empty candidate".into(),
            });
            continue;
        }
        bindings.insert("candidate".into(), candidate.clone());
        let judge_prompt = render(judge_template, &bindings)?;
        let judge_reply = gateway.complete(
            log,
            &format!("judge:{dimension}"),
            &backend.request(judge_prompt, JUDGE_TEMPERATURE),
            backend,
        )?;
        let (verdict, rationale) = parse_verdict(&judge_reply);
        trace.push(TraceStep {
            candidate: candidate.clone(),
            verdict,
            rationale,
        });
        if verdict == JudgeVerdict::Accepted {
            let text = if dimension == Dimension::D9 {
                split_mask_marker(&candidate).0
            } else {
                candidate
            };
            return Ok(Inquiry {
                problem_id: problem.id.clone(),
                dimension,
                text,
                reference_answer: None,
                status: InquiryStatus::Generated,
                iterations_used: iteration,
                generation_trace: trace,
                error: None,
            });
        }
    }
    Ok(Inquiry {
        problem_id: problem.id.clone(),
        dimension,
        text: String::new(),
        reference_answer: None,
        status: InquiryStatus::Unsuitable,
        iterations_used: budget,
        generation_trace: trace,
        error: None,
    })
}

// ---------------------------------------------------------------------------
// Reference answers
// ---------------------------------------------------------------------------

static BRACKET_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[([^\[\]]+)\]").unwrap());

/// Separates a D9 draft into inquiry text and the bracketed masked value the
/// draft is instructed to end with. Falls back to the last bracketed span
/// anywhere in the draft when the final line isn't exactly `[value]`.
fn split_mask_marker(candidate: &str) -> (String, Option<String>) {
    let trimmed = candidate.trim_end();
    if let Some(last_line) = trimmed.lines().last() {
        let line = last_line.trim();
        if line.starts_with('[') && line.ends_with(']') && line.len() > 2 {
            let inner = line[1..line.len() - 1].trim();
            if !inner.is_empty() && !inner.contains(['[', ']']) {
                let text = trimmed[..trimmed.len() - last_line.len()]
                    .trim_end()
                    .to_string();
                return (text, Some(inner.to_string()));
            }
        }
    }
    let mask = BRACKET_RE
        .captures_iter(candidate)
        .last()
        .map(|c| c[1].trim().to_string())
        .filter(|m| !m.is_empty());
    (trimmed.to_string(), mask)
}

/// Produces the reference answer for a generated inquiry.
///
/// Routing per dimension: D1 and D4 reuse the original answer (the edit must
/// not change it); D2 and D3 have none — their outcomes are judged against
/// the original answer; D5–D8 ask the reference agent, guided by the original
/// solution; D9 extracts the masked value from the accepted draft itself.
pub fn reference_answer(
    problem: &Problem,
    inquiry: &Inquiry,
    config: &EngineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    log: &mut CallLog,
) -> Result<Option<String>, EngineError> {
    let dimension = inquiry.dimension;
    if inquiry.status != InquiryStatus::Generated {
        return Err(EngineError::NotGenerated {
            dimension,
            status: inquiry.status,
        });
    }
    match dimension {
        Dimension::D2 | Dimension::D3 => Ok(None),
        Dimension::D1 | Dimension::D4 => Ok(Some(problem.answer.clone())),
        Dimension::D9 => {
            let accepted = inquiry
                .generation_trace
                .iter()
                .rev()
                .find(|step| step.verdict == JudgeVerdict::Accepted)
                .map(|step| step.candidate.as_str())
                .unwrap_or(inquiry.text.as_str());
            let (_, mask) = split_mask_marker(accepted);
            mask.map(Some)
                .ok_or_else(|| EngineError::ReferenceUnparseable {
                    dimension,
                    detail: "accepted draft carries no bracketed masked value".into(),
                })
        }
        Dimension::D5 | Dimension::D6 | Dimension::D7 | Dimension::D8 => {
            let template = templates.require(dimension, AgentRole::Reference)?;
            let mut bindings = base_bindings(problem);
            bindings.insert("inquiry".into(), inquiry.text.clone());
            let prompt = render(template, &bindings)?;
            let backend = &config.agent_backend;
            let completion = gateway.complete(
                log,
                &format!("reference:{dimension}"),
                &backend.request(prompt, REFERENCE_TEMPERATURE),
                backend,
            )?;
            let trimmed = completion.trim();
            if trimmed.is_empty() {
                return Err(EngineError::ReferenceUnparseable {
                    dimension,
                    detail: "reference agent returned an empty completion".into(),
                });
            }
            Ok(Some(trimmed.to_string()))
        }
    }
}

// ---------------------------------------------------------------------------
// Suite assembly
// ---------------------------------------------------------------------------

/// Builds the inquiry for one (problem, dimension) pair, folding every
/// failure into a `Failed` entry so one bad call never aborts a run.
pub fn build_entry(
    problem: &Problem,
    dimension: Dimension,
    config: &EngineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    log: &mut CallLog,
) -> Inquiry {
    if dimension == Dimension::D2 {
        return Inquiry {
            problem_id: problem.id.clone(),
            dimension,
            text: disrupt_sentences(&problem.body, problem_seed(&problem.id, config.seed)),
            reference_answer: None,
            status: InquiryStatus::Generated,
            iterations_used: 0,
            generation_trace: Vec::new(),
            error: None,
        };
    }
    match generate_inquiry(problem, dimension, config, gateway, templates, log) {
        Ok(mut inquiry) => {
            if inquiry.status == InquiryStatus::Generated {
                match reference_answer(problem, &inquiry, config, gateway, templates, log) {
                    Ok(reference) => inquiry.reference_answer = reference,
                    Err(err) => {
                        inquiry.status = InquiryStatus::Failed;
                        inquiry.error = Some(err.to_string());
                    }
                }
            }
            inquiry
        }
        Err(err) => Inquiry {
            problem_id: problem.id.clone(),
            dimension,
            text: String::new(),
            reference_answer: None,
            status: InquiryStatus::Failed,
            iterations_used: 0,
            generation_trace: Vec::new(),
            error: Some(err.to_string()),
        },
    }
}

/// Builds inquiries for all nine dimensions of one problem.
pub fn build_suite(
    problem: &Problem,
    config: &EngineConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    log: &mut CallLog,
) -> InquirySuite {
    let inquiries = Dimension::ALL
        .iter()
        .map(|&dim| {
            (
                dim,
                build_entry(problem, dim, config, gateway, templates, log),
            )
        })
        .collect();
    InquirySuite {
        problem_id: problem.id.clone(),
        inquiries,
    }
}
