//! Simulation engine for depression-diagnosis conversations between a
//! psychiatrist agent and case-derived patient agents.
//!
//! The psychiatrist carries a three-tier memory (conversation records,
//! electronic medical records, diagnostic skills). A supervisor plugin tracks
//! symptom statuses during the conversation, steers the dialogue through its
//! stages and reflects skills from misdiagnoses. Diagnoses are produced by
//! sampling several responses and voting.
//!
//! Module map:
//! - [`domain`]: risk levels, symptoms, cases, transcripts, diagnosis results
//! - [`backend`]: prompt templates and the text-generation/embedding contract
//! - [`memory`]: layered store, scoring, probability sampling, importance feedback
//! - [`agents`]: patient replies, psychiatrist utterances, diagnosis voting, EMR
//! - [`supervisor`]: symptom tracking, stage machine, skill reflection
//! - [`session`]: one diagnose-and-reflect session and split runners
//! - [`eval`]: case files, fixtures, metrics, experiments, lints, reports

pub mod agents;
pub mod backend;
pub mod domain;
pub mod error;
pub mod eval;
pub mod memory;
pub mod session;
pub mod supervisor;

pub use error::{Error, Result};
