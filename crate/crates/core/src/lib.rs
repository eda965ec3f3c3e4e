//! Core library for studying how a teacher should pick demonstrations for an
//! entropy-regularized inverse-reinforcement-learning student.
//!
//! The crate models the whole pipeline on finite tabular MDPs:
//!
//! * [`mdp`] — MDP types, soft/hard value iteration, occupancy measures,
//!   demonstrations, seeded rollouts.
//! * [`reward`] — feature maps, linear and quadratic reward models, feature
//!   expectations, ball projection.
//! * [`learner`] — the sequential projected-gradient student, likelihood
//!   fitting, feature-matching targets and demonstration budgets.
//! * [`teacher`] — omniscient / blackbox / agnostic demonstration selection
//!   and the teaching loop that drives a full interaction.
//! * [`car`] — the multi-lane driving gridworld used by the experiments.
//! * [`analysis`] — per-step metrics and the diagnostic bounds used to sanity
//!   check runs.
//! * [`io`] — JSON documents for environments and feature maps.

pub mod analysis;
pub mod car;
pub mod error;
pub mod io;
pub mod learner;
pub mod mdp;
pub mod reward;
pub mod teacher;

pub use error::{Error, Result};
