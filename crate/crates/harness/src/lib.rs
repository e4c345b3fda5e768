//! Experiment harness for the caption planner: world sources, experiment
//! runners and the command-line front end behind the `capplan` binary.
//!
//! Every runner is deterministic in its inputs. Runs fan out across seeds with
//! rayon, but records are collected in input order and carry their keys, so
//! files are byte-identical across reruns regardless of scheduling.

pub mod cli;
pub mod commands;
pub mod error;
pub mod experiments;
pub mod spec;
pub mod worlds;

pub use error::{HarnessError, Result};
pub use spec::{ExperimentKind, ExperimentSpec, SeedList};
pub use worlds::{Builtin, WorldFactory, WorldParams, WorldSource};
