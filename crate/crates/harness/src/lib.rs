//! Experiment orchestration for the adversarial-RL testbed: configuration,
//! benchmark tables, adversarial training, budget sweeps, tabular bound
//! checks, and report rendering. The `advrl` binary wires these into CLI
//! subcommands.

pub mod config;
pub mod defense;
pub mod eval;
pub mod report;
pub mod sweep;
pub mod theory_suite;

pub use advrl_core as core;
