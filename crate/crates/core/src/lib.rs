//! Batch harness for probing how LLM accuracy tracks answer visibility
//! in prompts.
//!
//! The pipeline renders controlled prompt conditions over a dataset of
//! problems (explicit answer, answer embedded in a reasoning chain,
//! masked chain, pruned chain, bare statement, plus conflicting-cue and
//! warned variants), dispatches them to chat-completion endpoints with
//! caching and rate limiting, grades responses with a judge model, and
//! aggregates per-condition accuracy tables with column averages, sample
//! standard deviations, and decreases versus the answer-explicit
//! baseline.

pub mod cache;
pub mod client;
pub mod conditions;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod judge;
pub mod masker;
pub mod metrics;
pub mod mock;
pub mod prompt;
pub mod report;
pub mod target;
pub mod templates;

pub use conditions::{ConditionTag, ConflictCondition, PromptCondition, WarningVariant};
pub use dataset::{load_dataset, validate_record, ProblemRecord};
pub use prompt::{PromptFactory, RenderedPrompt};
pub use target::ModelTarget;
