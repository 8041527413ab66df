//! MatrixRL and Shared-MatrixRL on synthetic factored-transition episodic MDPs.
//!
//! The transition law of every task is `P(s'|s,a) = phi(s,a)^T M psi(s')` for
//! known feature maps and an unknown core `M`. In the multitask setting every
//! core factors through one shared `d x r` matrix with orthonormal columns.
//!
//! Module map:
//! - [`linalg`]: Gram bookkeeping, ridge solves, determinant-lemma checks.
//! - [`env`]: instance generation, exact planning, sampling.
//! - [`single`]: the single-task optimistic agent.
//! - [`shared`]: joint factorized estimation, shared radius, radius allocation.
//! - [`planner`]: bonus-based optimistic backward induction used by both agents.
//! - [`harness`]: experiment loops, regret traces, Monte-Carlo audits.
//! - [`config`], [`report`], [`cli`]: the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod planner;
pub mod report;
pub mod rng;
pub mod shared;
pub mod single;

pub use error::{Error, Result};
