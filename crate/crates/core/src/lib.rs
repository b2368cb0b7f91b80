//! Probing suite for measuring how robustly language models have mastered
//! math word problems, beyond single-shot answer accuracy.
//!
//! The pipeline has three phases, mirrored by the CLI subcommands:
//!
//! 1. **generate** — for each source problem, a multi-agent loop produces one
//!    probing inquiry per evaluation dimension ([`engine`]).
//! 2. **evaluate** — the target model answers the original problem plus every
//!    generated inquiry, and each response is graded ([`pipeline`], [`grader`]).
//! 3. **report** — per-record outcomes are aggregated into pass rates, stage
//!    rates, and mastery metrics ([`metrics`], [`report`]).

pub mod dataset;
pub mod domain;
pub mod engine;
pub mod gateway;
pub mod grader;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod report;
