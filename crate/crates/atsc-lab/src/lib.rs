//! Experiment harness for the signal-control laboratory: TOML-driven
//! configuration, seeded training runs with resumable checkpoints,
//! evaluation of learned and hand-written controllers, and delay
//! reports suitable for cross-method comparison.

pub mod config;
pub mod methods;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use methods::Method;
