//! Many-field packet classification with ruleset decomposition and learned
//! decision trees.
//!
//! The pipeline has an offline and an online half. Offline, a 12-field
//! OpenFlow-style ruleset is split into two field subsets by ranking per-field
//! statistics ([`metrics`]), and one decision tree is built per subset —
//! either with the deterministic baseline builder ([`tree`]) or with a
//! policy-gradient learner that treats tree construction as an episodic
//! decision process ([`env`], [`learner`]). Online, a packet walks both trees
//! in parallel, the per-tree candidate rules are intersected, residual fields
//! are verified, and the highest-priority survivor wins ([`engine`]).
//!
//! An exhaustive linear-scan oracle ([`ruleset::oracle_classify`]) is the
//! ground truth everything else is checked against, and [`bench`] reproduces
//! the depth/memory comparison tables across decomposition schemes.
//!
//! The `book/` directory of the repository walks through the same material
//! chapter by chapter; its code snippets compile against this crate and run
//! under `cargo test --doc`.

pub mod bench;
pub mod config;
pub mod engine;
pub mod env;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod ruleset;
pub mod tree;

mod book;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Ruleset / trace / fixture text that does not parse; `line` is 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A value outside its field width, a malformed config, or a broken
    /// structural invariant.
    #[error("{0}")]
    Invalid(String),

    /// A structural tree action that cannot be applied to the given node.
    #[error("invalid action on node {node}: {msg}")]
    InvalidAction { node: usize, msg: String },

    /// Checkpoint or engine dump that does not match this build.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
