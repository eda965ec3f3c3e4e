//! Experiment harness for the teaching simulator: configuration, the
//! config-driven runner, CSV/SVG exporters, and the verification suite the
//! `demoteach` binary exposes.

pub mod config;
pub mod export;
pub mod runner;
pub mod verify;
