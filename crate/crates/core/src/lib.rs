//! Multi-agent trait-level essay scoring.
//!
//! A scoring pipeline for multimodal essay tasks: a student model assigns
//! initial scores across ten writing traits, a teacher model extracts
//! per-trait positive feedback, and a reflective pass revises the scores.
//! The crate also carries the evaluation harness (quadratic weighted kappa,
//! improvement tables, grouped breakdowns) used to measure the pipeline
//! against gold ratings.

pub mod agents;
pub mod domain;
pub mod experiment;
pub mod metrics;
pub mod prompts;
pub mod provider;
pub mod rubrics;
