//! Deterministic simulation harness.
//!
//! A synthetic multi-tenant world for desk-scale experiments: populations
//! with ground-truth weekly engagement curves, an engagement model with
//! within-window decay and same-slot cannibalization, and paired-arm
//! experiment runners with bootstrap lift intervals. Replays byte-identically
//! from `(config, master seed)` at any worker count.

mod engagement;
mod experiments;
mod population;

pub use engagement::{
    simulate_day, simulate_user_day, EngagementModel, ExecutionOutcome, ShareRule,
};
pub use experiments::{
    run_assembly_experiment, run_coordination_experiment, run_experiment, run_policy_comparison,
    AssemblyParams, AssemblyResult, CoordinationParams, CoordinationResult, EngagementConfig,
    ExperimentConfig, ExperimentKind, ExperimentReport, LiftRow, PolicyComparisonParams,
    PolicyComparisonResult, ShareKind, TierLift,
};
pub use population::{
    build_curve, generate_population, Bump, CurveParams, PopulationConfig, SyntheticUser,
};
