//! Tabular offline reinforcement learning with outcome-driven action flexibility.
//!
//! The crate is organized around a small finite-MDP substrate and three layers
//! on top of it:
//!
//! - [`mdp`] / [`dataset`]: environments (gridworld mazes, random MDPs) and
//!   offline transition datasets with support indexes.
//! - [`dynamics`] / [`operators`]: the empirical dynamics model, dataset-support
//!   queries, and exact Bellman backups — standard, action-supported, and
//!   outcome-driven — with fixed-point solvers and verification routines for
//!   their contraction / convergence properties.
//! - [`ensemble`] / [`trainer`] / [`harness`]: a K-member Q-ensemble with
//!   std-based uncertainty, the uncertainty-regularized policy trainer, and the
//!   experiment/verification harness with its CLI-facing configuration.

pub mod dataset;
pub mod dynamics;
pub mod ensemble;
pub mod harness;
pub mod mdp;
pub mod operators;
pub mod policy;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A state was queried that lies outside the dataset's state support.
    #[error("state {state} is outside the dataset state support")]
    OutsideSupport { state: usize },

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Fixed-point iteration did not reach tolerance within the iteration cap.
    /// Carries the sup-norm delta trace for diagnosis.
    #[error("no convergence after {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence {
        iterations: usize,
        last_delta: f64,
        trace: Vec<f64>,
    },

    /// A loss became non-finite during training.
    #[error("non-finite loss at iteration {iteration}: {context}")]
    NumericalFailure { iteration: usize, context: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
