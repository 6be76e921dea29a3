//! A laboratory for verifier-guided step-level beam search.
//!
//! Problems come from a synthetic reasoning world ([`synthworld`]) whose
//! ground truth is known exactly, so every search decision can be checked
//! against an oracle. On top of it sit generators, verifiers, the search
//! procedures, failure diagnostics and the sweep harness.

pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod rng;
pub mod search;
pub mod synthworld;
pub mod verifiers;

pub use domain::{
    sample_size, AnswerToken, BeamConfig, CandidateSet, PartialPath, Problem, SampleMethod, Score, Split, Step,
    StepToken,
};
pub use error::{Error, Result};
