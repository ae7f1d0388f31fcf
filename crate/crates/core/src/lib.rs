//! Core library for `omni`, a chain-of-thought corpus curation pipeline.
//!
//! The pipeline turns raw reasoning-problem corpora into annotated training
//! sets in four phases: problems are collected and deduplicated
//! ([`source`]), chain-of-thought traces are generated by teacher models
//! ([`generator`]), validated by LLM judges ([`validator`]), and scored
//! for reasoning verbosity (RV) and cognitive difficulty (CD)
//! ([`scoring`]). The [`sampler`] then selects capacity-matched traces per
//! problem and the [`exporter`] materializes SFT and DPO training files.
//!
//! All remote model calls go through the [`gateway`], which enforces
//! per-endpoint concurrency bounds and retries, and can be swapped for a
//! deterministic scripted mock in tests. Corpora are persisted as JSONL by
//! the [`corpus`] module.

pub mod corpus;
pub mod exporter;
pub mod gateway;
pub mod generator;
pub mod sampler;
pub mod scoring;
pub mod source;
pub mod stats;
pub mod templates;
pub mod tokenizer;
pub mod validator;

pub use corpus::{CoTRecord, CorpusStats, Problem, ScoreAnnotation};
pub use gateway::{ChatRequest, ChatResponse, Gateway, ModelEndpoint, RetryPolicy};
pub use sampler::{Candidate, SamplerConfig, SamplingPlan};
pub use scoring::ScoringConfig;
pub use tokenizer::Tokenizer;
