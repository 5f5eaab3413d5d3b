//! Desk-scale laboratory for semantic-reward reinforcement learning on a
//! synthetic bilingual corpus.
//!
//! The crate wires together five pieces:
//!
//! * [`corpus`] builds a synthetic concept-based bilingual corpus with
//!   disjoint source/target vocabularies.
//! * [`scorers`] provides semantic scorers for (anchor, candidate) pairs: an
//!   oracle concept-coverage scorer, a trainable contrastive embedding
//!   scorer, and a client for a remote reranker service.
//! * [`reward`] converts semantic scores into safeguarded rewards: a hard
//!   language gate, a batch-relative (or reference-length) length penalty,
//!   and a repetition penalty.
//! * [`policy`] is a feature-linear autoregressive token policy with exact
//!   log-probabilities, analytic gradients, and supervised training.
//! * [`grpo`] optimizes the policy with group-relative advantages, a clipped
//!   surrogate, and an exact KL penalty to a frozen reference.
//!
//! [`pipeline`] runs the full supervised -> reinforce -> recover experiment
//! and reports metrics; the `semrl` binary exposes it on the command line.
//!
//! Everything is deterministic given a seed: corpus synthesis, embedder and
//! policy training, sampling, and reports (modulo wall-clock timing fields).

pub mod corpus;
pub mod error;
pub mod grpo;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod scorers;
pub mod seeding;

pub use error::{Result, SemrlError};
