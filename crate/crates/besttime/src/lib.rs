//! Execution-time optimization engine for scheduled jobs.
//!
//! Multi-tenant scheduling requests are answered by ranking candidate time
//! slots from per-user temporal activity signals, applying a configurable
//! best-time policy with cross-tenant coordination, and returning jittered
//! execution timestamps. The crate also ships an ensemble weight learner for
//! combining signals, offline ranking evaluation, and a deterministic
//! simulation harness for desk-scale policy experiments.
//!
//! Module map:
//! - [`temporal`]: slots, score normalization, activity maps.
//! - [`signals`]: activity counters, synthetic predictors, time features.
//! - [`assembler`]: weighted signal combination and weight learning.
//! - [`policy`]: top-N / avoid-nearby selection, jitter, plan assembly.
//! - [`evaluation`]: NDCG, efficiency ratios, cohort breakdowns.
//! - [`sim`]: synthetic populations and paired-arm experiments.
//! - [`store`] / [`config`] / [`service`]: the deployment shell.

pub mod assembler;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod policy;
pub mod seeding;
pub mod service;
pub mod signals;
pub mod sim;
pub mod store;
pub mod temporal;

pub use error::{Error, Result};
