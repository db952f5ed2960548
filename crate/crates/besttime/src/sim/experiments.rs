//! Paired-arm experiments over synthetic populations.
//!
//! Three experiment designs are reproduced at desk scale as directional
//! results (signs and orderings, never production magnitudes):
//!
//! - policy comparison: avoid-nearby windows against a top-N control;
//! - signal assembly: a boosted two-channel assembler against the primary
//!   channel alone, with a 2-D activity-cohort breakdown;
//! - coordination: tiered peak-forfeiting against independent scheduling
//!   under same-slot cannibalization.
//!
//! Arms share users, predicted maps, jitter seeds, and engagement draws, so
//! they differ only through the decisions under test. Per-user results are
//! bootstrap-resampled (percentile intervals) for lift uncertainty. Runs are
//! deterministic for a `(config, seed)` pair regardless of worker count:
//! users are processed in order-preserving parallel batches and every random
//! quantity is keyed by stable hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::assembler::{assemble, AssemblerSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    cohort_report, ndcg, relative_lift, render_table, CohortRow, CohortTable, EfficiencyReport,
};
use crate::policy::{schedule, BestTimePolicy, Priority, SchedulingRequest};
use crate::seeding::{unit_from_hash, StableHasher};
use crate::temporal::{
    build_activity_map, partition_range, ChannelId, MetricBounds, MetricId, RawScore,
    TemporalActivityMap, TimeSlot, UseCaseId, SECONDS_PER_DAY,
};

use super::engagement::{simulate_user_day, EngagementModel, ShareRule};
use super::population::{generate_population, PopulationConfig, SyntheticUser};

/// First simulated epoch day; day 4 is a Monday.
const BASE_EPOCH_DAY: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PolicyComparison,
    Assembly,
    Coordination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareKind {
    None,
    InverseCount,
    Table,
}

/// Engagement model settings in config-file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngagementConfig {
    pub decay: f64,
    pub decay_window: usize,
    pub share: ShareKind,
    pub share_table: Option<Vec<f64>>,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        EngagementConfig {
            decay: 0.5,
            decay_window: 1,
            share: ShareKind::InverseCount,
            share_table: None,
        }
    }
}

impl EngagementConfig {
    pub fn to_model(&self) -> Result<EngagementModel> {
        let share = match self.share {
            ShareKind::None => ShareRule::None,
            ShareKind::InverseCount => ShareRule::InverseCount,
            ShareKind::Table => ShareRule::Table(self.share_table.clone().ok_or_else(|| {
                Error::Configuration("share = \"table\" requires share_table".into())
            })?),
        };
        let model = EngagementModel {
            decay: self.decay,
            decay_window: self.decay_window,
            share,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyComparisonParams {
    pub n_per_day: usize,
    pub avoid_windows: Vec<usize>,
}

impl Default for PolicyComparisonParams {
    fn default() -> Self {
        PolicyComparisonParams {
            n_per_day: 3,
            avoid_windows: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyParams {
    /// Boost weight on the secondary channel's signal.
    pub boost_weight: f64,
    /// Prediction score a channel collapses to as its activity level
    /// approaches zero (a model with no history predicts its prior).
    pub inactive_prior: f64,
    pub n_per_day: usize,
    pub ndcg_k: usize,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        AssemblyParams {
            boost_weight: 0.01,
            inactive_prior: 0.3,
            n_per_day: 1,
            ndcg_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationParams {
    pub use_cases: usize,
    pub high_priority: usize,
    /// Avoidance window used by every use case.
    pub w: usize,
}

impl Default for CoordinationParams {
    fn default() -> Self {
        CoordinationParams {
            use_cases: 10,
            high_priority: 5,
            w: 1,
        }
    }
}

/// Declarative experiment description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub days: u32,
    pub slot_length: i64,
    pub bootstrap_resamples: usize,
    /// Rayon worker count; `None` uses the global default.
    pub workers: Option<usize>,
    pub population: PopulationConfig,
    pub engagement: EngagementConfig,
    pub policy_comparison: PolicyComparisonParams,
    pub assembly: AssemblyParams,
    pub coordination: CoordinationParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::PolicyComparison,
            seed: 7,
            days: 1,
            slot_length: 3600,
            bootstrap_resamples: 1000,
            workers: None,
            population: PopulationConfig::default(),
            engagement: EngagementConfig::default(),
            policy_comparison: PolicyComparisonParams::default(),
            assembly: AssemblyParams::default(),
            coordination: CoordinationParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Policy comparison defaults: broad flat-topped activity windows, so
    /// near-peak slots are near-equal and the within-window decay is the only
    /// systematic difference between arms.
    pub fn policy_comparison_preset() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::PolicyComparison,
            days: 1,
            population: PopulationConfig {
                size: 10_000,
                channels: vec!["a".into()],
                bumps: [1, 1],
                amplitude: [0.3, 0.8],
                plateau_half: [7.0, 8.0],
                shoulder_sigma: [1.2, 2.0],
                activity: [1.0, 1.0],
                noise_scale: 0.05,
                ..PopulationConfig::default()
            },
            engagement: EngagementConfig {
                decay: 0.5,
                decay_window: 1,
                share: ShareKind::None,
                share_table: None,
            },
            ..ExperimentConfig::default()
        }
    }

    /// Assembly defaults: two perfectly correlated channels, activity gates
    /// spread over [0, 1], peaked curves.
    pub fn assembly_preset() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Assembly,
            days: 3,
            population: PopulationConfig {
                size: 6_000,
                channels: vec!["a".into(), "b".into()],
                correlation: 1.0,
                bumps: [1, 1],
                center_hours: [8.0, 23.0],
                amplitude: [0.3, 0.8],
                plateau_half: [0.0, 1.0],
                shoulder_sigma: [1.5, 2.5],
                activity: [0.0, 1.0],
                inactive_probability: 0.3,
                noise_scale: 0.05,
                ..PopulationConfig::default()
            },
            engagement: EngagementConfig {
                decay: 1.0,
                decay_window: 1,
                share: ShareKind::None,
                share_table: None,
            },
            ..ExperimentConfig::default()
        }
    }

    /// Coordination defaults: ten once-daily use cases on one sharply peaked
    /// channel, cannibalization on, decay off (isolating the share effect).
    pub fn coordination_preset() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Coordination,
            days: 1,
            population: PopulationConfig {
                size: 4_000,
                channels: vec!["a".into()],
                bumps: [1, 1],
                amplitude: [0.3, 0.8],
                plateau_half: [0.0, 0.0],
                shoulder_sigma: [1.5, 3.0],
                activity: [1.0, 1.0],
                noise_scale: 0.05,
                ..PopulationConfig::default()
            },
            engagement: EngagementConfig {
                decay: 1.0,
                decay_window: 1,
                share: ShareKind::InverseCount,
                share_table: None,
            },
            ..ExperimentConfig::default()
        }
    }
}

/// Efficiency and bootstrap lift of one arm against the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub arm: String,
    pub efficiency: f64,
    pub lift: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparisonResult {
    pub control: EfficiencyReport,
    pub rows: Vec<LiftRow>,
    pub users: usize,
    pub days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyResult {
    pub control: EfficiencyReport,
    pub assembled: LiftRow,
    pub mean_ndcg_control: f64,
    pub mean_ndcg_assembled: f64,
    /// 2-D (primary x secondary activity decile) grid of the mean per-user
    /// engagement difference per execution.
    pub cohort_lift: CohortTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierLift {
    pub group: String,
    pub control_efficiency: f64,
    pub test_efficiency: f64,
    pub lift: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationResult {
    pub tiers: Vec<TierLift>,
    pub global: TierLift,
}

/// Result of whichever experiment a config selects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentReport {
    PolicyComparison(PolicyComparisonResult),
    Assembly(AssemblyResult),
    Coordination(CoordinationResult),
}

/// Run the experiment named by the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.experiment {
        ExperimentKind::PolicyComparison => {
            Ok(ExperimentReport::PolicyComparison(run_policy_comparison(cfg)?))
        }
        ExperimentKind::Assembly => Ok(ExperimentReport::Assembly(run_assembly_experiment(cfg)?)),
        ExperimentKind::Coordination => {
            Ok(ExperimentReport::Coordination(run_coordination_experiment(cfg)?))
        }
    }
}

fn make_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Configuration(format!("worker pool: {e}")))
}

fn day_slots(day: u32, slot_length: i64) -> Result<Vec<TimeSlot>> {
    let t0 = (BASE_EPOCH_DAY + i64::from(day)) * SECONDS_PER_DAY;
    partition_range(t0, t0 + SECONDS_PER_DAY, slot_length)
}

fn noise_unit(seed: u64, user: &SyntheticUser, day: u32, slot: usize, tag: &str) -> f64 {
    unit_from_hash(
        StableHasher::new(seed)
            .write_str(tag)
            .write_str(user.id.as_str())
            .write_u64(u64::from(day))
            .write_u64(slot as u64)
            .finish(),
    )
}

/// Predicted map as the true curve plus symmetric prediction noise,
/// normalized per map (ranking is all the policies consume).
fn noisy_true_map(
    user: &SyntheticUser,
    channel: &ChannelId,
    slots: &[TimeSlot],
    seed: u64,
    day: u32,
) -> Result<TemporalActivityMap> {
    let raws: BTreeMap<usize, RawScore> = slots
        .iter()
        .map(|slot| {
            let noise = user.noise_scale * (2.0 * noise_unit(seed, user, day, slot.index, "noise") - 1.0);
            Ok((
                slot.index,
                RawScore::new(user.engagement_prob(channel, slot) + noise)?,
            ))
        })
        .collect::<Result<_>>()?;
    let bounds = MetricBounds::from_scores(
        MetricId::new(channel.as_str()),
        raws.values().map(|r| r.value()),
    )?;
    build_activity_map(user.id.clone(), MetricId::new(channel.as_str()), &raws, &bounds)
}

/// Predicted map whose information content scales with the user's channel
/// activity: an inactive channel's model has no history and predicts a flat
/// prior, so its normalized scores carry no ranking signal. Normalization
/// uses fixed theoretical bounds so flat predictions stay flat.
fn activity_scaled_map(
    user: &SyntheticUser,
    channel: &ChannelId,
    slots: &[TimeSlot],
    prior: f64,
    seed: u64,
    day: u32,
) -> Result<TemporalActivityMap> {
    let metric = MetricId::new(channel.as_str());
    let activity = user.activity.get(channel).copied().unwrap_or(0.0);
    let raws: BTreeMap<usize, RawScore> = slots
        .iter()
        .map(|slot| {
            let tag = format!("pred:{channel}");
            let noise =
                user.noise_scale * (2.0 * noise_unit(seed, user, day, slot.index, &tag) - 1.0);
            let informed = user.engagement_prob(channel, slot) + noise;
            Ok((
                slot.index,
                RawScore::new(activity * informed + (1.0 - activity) * prior)?,
            ))
        })
        .collect::<Result<_>>()?;
    let bounds = MetricBounds::new(metric.clone(), 0.0, 1.0)?
        .with_provenance("theoretical probability range");
    build_activity_map(user.id.clone(), metric, &raws, &bounds)
}

fn jitter_seed(seed: u64, user: &SyntheticUser, day: u32, use_case: &str) -> u64 {
    StableHasher::new(seed)
        .write_str("jitter")
        .write_str(user.id.as_str())
        .write_u64(u64::from(day))
        .write_str(use_case)
        .finish()
}

fn plan_request(
    use_case: &str,
    user: &SyntheticUser,
    day: u32,
    n: usize,
    slot_length: i64,
    policy: BestTimePolicy,
) -> SchedulingRequest {
    let t0 = (BASE_EPOCH_DAY + i64::from(day)) * SECONDS_PER_DAY;
    SchedulingRequest {
        use_case: UseCaseId::from(use_case),
        user: user.id.clone(),
        t_start: t0,
        t_end: t0 + SECONDS_PER_DAY,
        n,
        slot_length,
        metric_spec: None,
        policy: Some(policy),
        explore: false,
    }
}

/// Pooled engagement totals: per-user `(engaged, executions)`.
type PerUser = Vec<(f64, u64)>;

fn pooled_efficiency(per_user: &PerUser) -> Result<f64> {
    let engaged: f64 = per_user.iter().map(|(e, _)| e).sum();
    let executions: u64 = per_user.iter().map(|(_, x)| x).sum();
    crate::evaluation::efficiency_ratio(engaged, executions)
}

/// Percentile bootstrap over users of the relative efficiency lift.
fn bootstrap_lift(
    control: &PerUser,
    test: &PerUser,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    assert_eq!(control.len(), test.len(), "arms must share the population");
    let point = relative_lift(pooled_efficiency(test)?, pooled_efficiency(control)?)?;
    let n = control.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lifts = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut ce = 0.0;
        let mut cx = 0u64;
        let mut te = 0.0;
        let mut tx = 0u64;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            ce += control[i].0;
            cx += control[i].1;
            te += test[i].0;
            tx += test[i].1;
        }
        if cx > 0 && tx > 0 && ce > 0.0 {
            lifts.push((te / tx as f64) / (ce / cx as f64) - 1.0);
        }
    }
    if lifts.is_empty() {
        return Err(Error::InvalidArgument(
            "no valid bootstrap resamples (control engagement all zero?)".into(),
        ));
    }
    lifts.sort_by(|a, b| a.total_cmp(b));
    let b = lifts.len();
    let lo = lifts[((b as f64 * 0.025).floor() as usize).min(b - 1)];
    let hi = lifts[((b as f64 * 0.975).ceil() as usize).saturating_sub(1).min(b - 1)];
    Ok((point, lo, hi))
}

/// Compare avoid-nearby windows against a top-N control on a shared
/// population with paired draws.
pub fn run_policy_comparison(cfg: &ExperimentConfig) -> Result<PolicyComparisonResult> {
    let params = &cfg.policy_comparison;
    if params.avoid_windows.is_empty() {
        return Err(Error::Configuration("no avoid windows configured".into()));
    }
    let model = cfg.engagement.to_model()?;
    let users = generate_population(
        &cfg.population,
        StableHasher::new(cfg.seed).write_str("population").finish(),
    );
    if users.is_empty() {
        return Err(Error::Configuration("population size must be >= 1".into()));
    }
    let channel = ChannelId::new(cfg.population.channels[0].clone());
    let mut arms: Vec<(String, BestTimePolicy)> =
        vec![("top_n".into(), BestTimePolicy::top_n(Priority::High))];
    for &w in &params.avoid_windows {
        arms.push((
            format!("avoid_{w}"),
            BestTimePolicy::avoid_nearby(w, Priority::High),
        ));
    }

    let pool = make_pool(cfg.workers)?;
    let per_arm: Vec<PerUser> = pool.install(|| {
        arms.iter()
            .map(|(_, policy)| {
                users
                    .par_iter()
                    .map(|user| -> Result<(f64, u64)> {
                        let mut engaged = 0.0;
                        let mut executions = 0u64;
                        for day in 0..cfg.days {
                            let slots = day_slots(day, cfg.slot_length)?;
                            let map = noisy_true_map(user, &channel, &slots, cfg.seed, day)?;
                            let request = plan_request(
                                "sim",
                                user,
                                day,
                                params.n_per_day,
                                cfg.slot_length,
                                *policy,
                            );
                            let plan =
                                schedule(&request, &map, jitter_seed(cfg.seed, user, day, "sim"))?;
                            if plan.truncated {
                                return Err(Error::Configuration(
                                    "plan truncated; candidate set too small for n and w".into(),
                                ));
                            }
                            let executions_list: Vec<(UseCaseId, usize, i64)> = plan
                                .slots
                                .iter()
                                .zip(&plan.timestamps)
                                .map(|(&s, &t)| (plan.use_case.clone(), s, t))
                                .collect();
                            let outcomes = simulate_user_day(
                                user,
                                &channel,
                                &executions_list,
                                &slots,
                                &model,
                                cfg.seed,
                            );
                            engaged += outcomes.iter().filter(|o| o.engaged).count() as f64;
                            executions += outcomes.len() as u64;
                        }
                        Ok((engaged, executions))
                    })
                    .collect::<Result<PerUser>>()
            })
            .collect::<Result<Vec<PerUser>>>()
    })?;

    let expected = users.len() as u64 * u64::from(cfg.days) * params.n_per_day as u64;
    for (i, arm) in per_arm.iter().enumerate() {
        let total: u64 = arm.iter().map(|(_, x)| x).sum();
        if total != expected {
            return Err(Error::Configuration(format!(
                "arm {} executed {total} of {expected} planned executions",
                arms[i].0
            )));
        }
    }

    let control = EfficiencyReport::new(
        arms[0].0.clone(),
        per_arm[0].iter().map(|(e, _)| e).sum::<f64>(),
        expected,
    )?;
    let mut rows = Vec::new();
    for (i, (name, _)) in arms.iter().enumerate().skip(1) {
        let (lift, lo, hi) = bootstrap_lift(
            &per_arm[0],
            &per_arm[i],
            cfg.bootstrap_resamples,
            StableHasher::new(cfg.seed).write_str("bootstrap").write_u64(i as u64).finish(),
        )?;
        rows.push(LiftRow {
            arm: name.clone(),
            efficiency: pooled_efficiency(&per_arm[i])?,
            lift,
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok(PolicyComparisonResult {
        control,
        rows,
        users: users.len(),
        days: cfg.days,
    })
}

/// Compare `primary + boost * activity_b * secondary` assembly against the
/// primary channel alone.
pub fn run_assembly_experiment(cfg: &ExperimentConfig) -> Result<AssemblyResult> {
    let params = &cfg.assembly;
    if cfg.population.channels.len() < 2 {
        return Err(Error::Configuration(
            "assembly experiment needs two channels".into(),
        ));
    }
    let model = cfg.engagement.to_model()?;
    let users = generate_population(
        &cfg.population,
        StableHasher::new(cfg.seed).write_str("population").finish(),
    );
    let primary = ChannelId::new(cfg.population.channels[0].clone());
    let secondary = ChannelId::new(cfg.population.channels[1].clone());
    let primary_metric = MetricId::new(primary.as_str());
    let secondary_metric = MetricId::new(secondary.as_str());
    let spec = AssemblerSpec::new(
        UseCaseId::from("assembly"),
        [
            (primary_metric.clone(), 1.0),
            (secondary_metric.clone(), params.boost_weight),
        ]
        .into_iter()
        .collect(),
    )?;

    struct UserStats {
        control: (f64, u64),
        assembled: (f64, u64),
        ndcg_control: f64,
        ndcg_assembled: f64,
    }

    let pool = make_pool(cfg.workers)?;
    let stats: Vec<UserStats> = pool.install(|| {
        users
            .par_iter()
            .map(|user| -> Result<UserStats> {
                let mut s = UserStats {
                    control: (0.0, 0),
                    assembled: (0.0, 0),
                    ndcg_control: 0.0,
                    ndcg_assembled: 0.0,
                };
                for day in 0..cfg.days {
                    let slots = day_slots(day, cfg.slot_length)?;
                    let map_a = activity_scaled_map(
                        user,
                        &primary,
                        &slots,
                        params.inactive_prior,
                        cfg.seed,
                        day,
                    )?;
                    let map_b = activity_scaled_map(
                        user,
                        &secondary,
                        &slots,
                        params.inactive_prior,
                        cfg.seed,
                        day,
                    )?;
                    // Primary channel is ungated; the secondary is gated by
                    // the user's activity on it.
                    let gates: BTreeMap<MetricId, f64> = [
                        (primary_metric.clone(), 1.0),
                        (
                            secondary_metric.clone(),
                            user.activity.get(&secondary).copied().unwrap_or(0.0),
                        ),
                    ]
                    .into();
                    let metric_maps: BTreeMap<MetricId, TemporalActivityMap> = [
                        (primary_metric.clone(), map_a.clone()),
                        (secondary_metric.clone(), map_b),
                    ]
                    .into();
                    let assembled_map = assemble(&spec, &metric_maps, &gates)?;

                    let gains: BTreeMap<usize, f64> = slots
                        .iter()
                        .map(|slot| (slot.index, user.engagement_prob(&primary, slot)))
                        .collect();

                    for (arm_map, totals, ndcg_sum) in [
                        (&map_a, &mut s.control, &mut s.ndcg_control),
                        (&assembled_map, &mut s.assembled, &mut s.ndcg_assembled),
                    ] {
                        let request = plan_request(
                            "assembly",
                            user,
                            day,
                            params.n_per_day,
                            cfg.slot_length,
                            BestTimePolicy::top_n(Priority::High),
                        );
                        let plan = schedule(
                            &request,
                            arm_map,
                            jitter_seed(cfg.seed, user, day, "assembly"),
                        )?;
                        let executions: Vec<(UseCaseId, usize, i64)> = plan
                            .slots
                            .iter()
                            .zip(&plan.timestamps)
                            .map(|(&sl, &t)| (plan.use_case.clone(), sl, t))
                            .collect();
                        let outcomes = simulate_user_day(
                            user,
                            &primary,
                            &executions,
                            &slots,
                            &model,
                            cfg.seed,
                        );
                        totals.0 += outcomes.iter().filter(|o| o.engaged).count() as f64;
                        totals.1 += outcomes.len() as u64;

                        let order = crate::policy::top_n_policy(arm_map, slots.len())?;
                        *ndcg_sum += ndcg(&order, &gains, params.ndcg_k)?;
                    }
                }
                s.ndcg_control /= f64::from(cfg.days.max(1));
                s.ndcg_assembled /= f64::from(cfg.days.max(1));
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let control_per_user: PerUser = stats.iter().map(|s| s.control).collect();
    let test_per_user: PerUser = stats.iter().map(|s| s.assembled).collect();
    let (lift, lo, hi) = bootstrap_lift(
        &control_per_user,
        &test_per_user,
        cfg.bootstrap_resamples,
        StableHasher::new(cfg.seed).write_str("bootstrap-assembly").finish(),
    )?;

    let cohort_rows: Vec<CohortRow> = users
        .iter()
        .zip(&stats)
        .map(|(user, s)| CohortRow {
            user: user.id.clone(),
            activity: vec![
                user.activity.get(&primary).copied().unwrap_or(0.0),
                user.activity.get(&secondary).copied().unwrap_or(0.0),
            ],
            metric: (s.assembled.0 - s.control.0) / s.control.1.max(1) as f64,
        })
        .collect();
    let cohort_lift = cohort_report(&cohort_rows, 2)?;

    let mean = |f: fn(&UserStats) -> f64| -> f64 {
        stats.iter().map(f).sum::<f64>() / stats.len() as f64
    };

    Ok(AssemblyResult {
        control: EfficiencyReport::new(
            "primary_only",
            control_per_user.iter().map(|(e, _)| e).sum::<f64>(),
            control_per_user.iter().map(|(_, x)| x).sum::<u64>(),
        )?,
        assembled: LiftRow {
            arm: "assembled".into(),
            efficiency: pooled_efficiency(&test_per_user)?,
            lift,
            ci_low: lo,
            ci_high: hi,
        },
        mean_ndcg_control: mean(|s| s.ndcg_control),
        mean_ndcg_assembled: mean(|s| s.ndcg_assembled),
        cohort_lift,
    })
}

/// Tiered coordination against independent scheduling for multiple use cases
/// competing on one channel.
pub fn run_coordination_experiment(cfg: &ExperimentConfig) -> Result<CoordinationResult> {
    let params = &cfg.coordination;
    if params.use_cases == 0 {
        return Err(Error::Configuration("need at least one use case".into()));
    }
    if params.high_priority > params.use_cases {
        return Err(Error::Configuration(
            "high_priority exceeds the use case count".into(),
        ));
    }
    let model = cfg.engagement.to_model()?;
    let users = generate_population(
        &cfg.population,
        StableHasher::new(cfg.seed).write_str("population").finish(),
    );
    let channel = ChannelId::new(cfg.population.channels[0].clone());
    let use_cases: Vec<String> = (0..params.use_cases).map(|i| format!("uc{i}")).collect();

    // (engaged, executions) for (high tier, low tier) per user, per arm.
    struct UserTotals {
        high: (f64, u64),
        low: (f64, u64),
    }

    let run_arm = |tiered: bool| -> Result<Vec<UserTotals>> {
        let pool = make_pool(cfg.workers)?;
        pool.install(|| {
            users
                .par_iter()
                .map(|user| -> Result<UserTotals> {
                    let mut totals = UserTotals {
                        high: (0.0, 0),
                        low: (0.0, 0),
                    };
                    for day in 0..cfg.days {
                        let slots = day_slots(day, cfg.slot_length)?;
                        let map = noisy_true_map(user, &channel, &slots, cfg.seed, day)?;
                        let mut executions: Vec<(UseCaseId, usize, i64)> = Vec::new();
                        for (i, uc) in use_cases.iter().enumerate() {
                            let low_tier = tiered && i >= params.high_priority;
                            let priority = if low_tier { Priority::Low } else { Priority::High };
                            let request = plan_request(
                                uc,
                                user,
                                day,
                                1,
                                cfg.slot_length,
                                BestTimePolicy::avoid_nearby(params.w, priority),
                            );
                            let plan =
                                schedule(&request, &map, jitter_seed(cfg.seed, user, day, uc))?;
                            for (&s, &t) in plan.slots.iter().zip(&plan.timestamps) {
                                executions.push((plan.use_case.clone(), s, t));
                            }
                        }
                        let outcomes = simulate_user_day(
                            user, &channel, &executions, &slots, &model, cfg.seed,
                        );
                        for outcome in outcomes {
                            let idx = use_cases
                                .iter()
                                .position(|uc| uc.as_str() == outcome.use_case.as_str())
                                .expect("use case from own plan");
                            let bucket = if idx < params.high_priority {
                                &mut totals.high
                            } else {
                                &mut totals.low
                            };
                            bucket.0 += f64::from(outcome.engaged);
                            bucket.1 += 1;
                        }
                    }
                    Ok(totals)
                })
                .collect::<Result<Vec<_>>>()
        })
    };

    let control = run_arm(false)?;
    let test = run_arm(true)?;

    let slice = |totals: &[UserTotals], pick: fn(&UserTotals) -> (f64, u64)| -> PerUser {
        totals.iter().map(pick).collect()
    };
    let combine = |totals: &[UserTotals]| -> PerUser {
        totals
            .iter()
            .map(|t| (t.high.0 + t.low.0, t.high.1 + t.low.1))
            .collect()
    };

    let mut tiers = Vec::new();
    type TierPick = fn(&UserTotals) -> (f64, u64);
    let mut tier_defs: Vec<(&str, TierPick)> = vec![("high", |t| t.high)];
    if params.high_priority < params.use_cases {
        tier_defs.push(("low", |t| t.low));
    }
    for (i, (name, pick)) in tier_defs.iter().enumerate() {
        let c = slice(&control, *pick);
        let t = slice(&test, *pick);
        let (lift, lo, hi) = bootstrap_lift(
            &c,
            &t,
            cfg.bootstrap_resamples,
            StableHasher::new(cfg.seed)
                .write_str("bootstrap-tier")
                .write_u64(i as u64)
                .finish(),
        )?;
        tiers.push(TierLift {
            group: (*name).into(),
            control_efficiency: pooled_efficiency(&c)?,
            test_efficiency: pooled_efficiency(&t)?,
            lift,
            ci_low: lo,
            ci_high: hi,
        });
    }
    let c_all = combine(&control);
    let t_all = combine(&test);
    let (lift, lo, hi) = bootstrap_lift(
        &c_all,
        &t_all,
        cfg.bootstrap_resamples,
        StableHasher::new(cfg.seed).write_str("bootstrap-global").finish(),
    )?;
    let global = TierLift {
        group: "global".into(),
        control_efficiency: pooled_efficiency(&c_all)?,
        test_efficiency: pooled_efficiency(&t_all)?,
        lift,
        ci_low: lo,
        ci_high: hi,
    };
    Ok(CoordinationResult { tiers, global })
}

fn percent(v: f64) -> String {
    format!("{:+.2}%", v * 100.0)
}

impl fmt::Display for PolicyComparisonResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "policy comparison: {} users, {} day(s), control efficiency {:.4}",
            self.users, self.days, self.control.efficiency
        )?;
        let headers = vec![
            "arm".to_string(),
            "efficiency".to_string(),
            "lift".to_string(),
            "ci95".to_string(),
        ];
        let mut rows = vec![vec![
            self.control.group.clone(),
            format!("{:.4}", self.control.efficiency),
            "control".to_string(),
            String::new(),
        ]];
        for row in &self.rows {
            rows.push(vec![
                row.arm.clone(),
                format!("{:.4}", row.efficiency),
                percent(row.lift),
                format!("[{}, {}]", percent(row.ci_low), percent(row.ci_high)),
            ]);
        }
        f.write_str(&render_table(&headers, &rows))
    }
}

impl PolicyComparisonResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["arm", "efficiency", "lift", "ci_low", "ci_high"])?;
        w.write_record([
            self.control.group.as_str(),
            &format!("{:.6}", self.control.efficiency),
            "0",
            "",
            "",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.arm.as_str(),
                &format!("{:.6}", row.efficiency),
                &format!("{:.6}", row.lift),
                &format!("{:.6}", row.ci_low),
                &format!("{:.6}", row.ci_high),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for AssemblyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers = vec![
            "arm".to_string(),
            "efficiency".to_string(),
            "lift".to_string(),
            "ci95".to_string(),
            "mean_ndcg".to_string(),
        ];
        let rows = vec![
            vec![
                self.control.group.clone(),
                format!("{:.4}", self.control.efficiency),
                "control".into(),
                String::new(),
                format!("{:.4}", self.mean_ndcg_control),
            ],
            vec![
                self.assembled.arm.clone(),
                format!("{:.4}", self.assembled.efficiency),
                percent(self.assembled.lift),
                format!(
                    "[{}, {}]",
                    percent(self.assembled.ci_low),
                    percent(self.assembled.ci_high)
                ),
                format!("{:.4}", self.mean_ndcg_assembled),
            ],
        ];
        f.write_str(&render_table(&headers, &rows))?;
        writeln!(f)?;
        writeln!(f, "per-execution engagement difference by activity cohort")?;
        write!(f, "{}", self.cohort_lift)
    }
}

impl AssemblyResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["arm", "efficiency", "lift", "ci_low", "ci_high", "mean_ndcg"])?;
        w.write_record([
            self.control.group.as_str(),
            &format!("{:.6}", self.control.efficiency),
            "0",
            "",
            "",
            &format!("{:.6}", self.mean_ndcg_control),
        ])?;
        w.write_record([
            self.assembled.arm.as_str(),
            &format!("{:.6}", self.assembled.efficiency),
            &format!("{:.6}", self.assembled.lift),
            &format!("{:.6}", self.assembled.ci_low),
            &format!("{:.6}", self.assembled.ci_high),
            &format!("{:.6}", self.mean_ndcg_assembled),
        ])?;
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for CoordinationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers = vec![
            "group".to_string(),
            "control_eff".to_string(),
            "tiered_eff".to_string(),
            "lift".to_string(),
            "ci95".to_string(),
        ];
        let mut rows: Vec<Vec<String>> = Vec::new();
        for tier in self.tiers.iter().chain(std::iter::once(&self.global)) {
            rows.push(vec![
                tier.group.clone(),
                format!("{:.4}", tier.control_efficiency),
                format!("{:.4}", tier.test_efficiency),
                percent(tier.lift),
                format!("[{}, {}]", percent(tier.ci_low), percent(tier.ci_high)),
            ]);
        }
        f.write_str(&render_table(&headers, &rows))
    }
}

impl CoordinationResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "group",
            "control_efficiency",
            "tiered_efficiency",
            "lift",
            "ci_low",
            "ci_high",
        ])?;
        for tier in self.tiers.iter().chain(std::iter::once(&self.global)) {
            w.write_record([
                tier.group.as_str(),
                &format!("{:.6}", tier.control_efficiency),
                &format!("{:.6}", tier.test_efficiency),
                &format!("{:.6}", tier.lift),
                &format!("{:.6}", tier.ci_low),
                &format!("{:.6}", tier.ci_high),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        match self {
            ExperimentReport::PolicyComparison(r) => r.write_csv(writer),
            ExperimentReport::Assembly(r) => r.write_csv(writer),
            ExperimentReport::Coordination(r) => r.write_csv(writer),
        }
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentReport::PolicyComparison(r) => r.fmt(f),
            ExperimentReport::Assembly(r) => r.fmt(f),
            ExperimentReport::Coordination(r) => r.fmt(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_policy_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::policy_comparison_preset();
        cfg.population.size = 400;
        cfg.bootstrap_resamples = 200;
        cfg
    }

    #[test]
    fn single_slot_candidate_set_equalizes_arms() {
        let mut cfg = small_policy_cfg();
        // One 24-hour slot per day: every policy is a forced choice.
        cfg.slot_length = SECONDS_PER_DAY;
        cfg.policy_comparison.n_per_day = 1;
        let result = run_policy_comparison(&cfg).unwrap();
        for row in &result.rows {
            assert_eq!(row.lift, 0.0, "{} diverged on a single slot", row.arm);
        }
    }

    #[test]
    fn decay_off_washes_out_policy_differences() {
        let mut cfg = small_policy_cfg();
        cfg.engagement.decay = 1.0;
        let result = run_policy_comparison(&cfg).unwrap();
        for row in &result.rows {
            assert!(
                row.ci_low <= 0.0 && row.ci_high >= 0.0,
                "{}: CI [{}, {}] excludes 0 with decay off",
                row.arm,
                row.ci_low,
                row.ci_high
            );
        }
    }

    #[test]
    fn policy_comparison_replays() {
        let cfg = small_policy_cfg();
        let a = run_policy_comparison(&cfg).unwrap();
        let b = run_policy_comparison(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_boost_arms_are_identical() {
        let mut cfg = ExperimentConfig::assembly_preset();
        cfg.population.size = 300;
        cfg.days = 1;
        cfg.bootstrap_resamples = 100;
        cfg.assembly.boost_weight = 0.0;
        let result = run_assembly_experiment(&cfg).unwrap();
        assert_eq!(result.assembled.lift, 0.0);
        assert_eq!(result.mean_ndcg_control, result.mean_ndcg_assembled);
        assert!(result.cohort_lift.cells.values().all(|c| c.mean == 0.0));
    }

    #[test]
    fn uncorrelated_fully_active_population_gains_nothing() {
        let mut cfg = ExperimentConfig::assembly_preset();
        cfg.population.size = 1500;
        cfg.days = 1;
        cfg.bootstrap_resamples = 300;
        cfg.population.correlation = 0.0;
        cfg.population.activity = [1.0, 1.0];
        cfg.population.inactive_probability = 0.0;
        let result = run_assembly_experiment(&cfg).unwrap();
        assert!(
            result.assembled.lift.abs() < 0.02,
            "lift {} should be negligible",
            result.assembled.lift
        );
    }

    #[test]
    fn single_use_case_coordination_is_a_no_op() {
        let mut cfg = ExperimentConfig::coordination_preset();
        cfg.population.size = 300;
        cfg.bootstrap_resamples = 100;
        cfg.coordination.use_cases = 1;
        cfg.coordination.high_priority = 1;
        let result = run_coordination_experiment(&cfg).unwrap();
        assert_eq!(result.global.lift, 0.0);
        assert_eq!(result.tiers.len(), 1);
        assert_eq!(result.tiers[0].lift, 0.0);
    }

    #[test]
    fn no_cannibalization_makes_coordination_lose() {
        let mut cfg = ExperimentConfig::coordination_preset();
        cfg.population.size = 1500;
        cfg.bootstrap_resamples = 300;
        cfg.engagement.share = ShareKind::None;
        let result = run_coordination_experiment(&cfg).unwrap();
        assert!(
            result.global.lift <= 0.0,
            "forfeiting the peak for nothing should not help: {}",
            result.global.lift
        );
    }

    #[test]
    fn oracle_efficiency_matches_population_peak_mean() {
        // Noise-free maps rank by the true curve, so top-1 picks the true
        // argmax; with decay and cannibalization off, efficiency estimates
        // the population mean of the per-user peak probability.
        let mut cfg = small_policy_cfg();
        cfg.population.size = 2000;
        cfg.population.noise_scale = 0.0;
        cfg.engagement.decay = 1.0;
        cfg.policy_comparison.n_per_day = 1;
        cfg.policy_comparison.avoid_windows = vec![1];
        cfg.days = 2;
        let result = run_policy_comparison(&cfg).unwrap();

        let users = generate_population(
            &cfg.population,
            StableHasher::new(cfg.seed).write_str("population").finish(),
        );
        let channel = ChannelId::new(cfg.population.channels[0].clone());
        let mut expected = 0.0;
        for user in &users {
            for day in 0..cfg.days {
                let slots = day_slots(day, cfg.slot_length).unwrap();
                let peak = slots
                    .iter()
                    .map(|s| user.engagement_prob(&channel, s))
                    .fold(0.0f64, f64::max);
                expected += peak;
            }
        }
        expected /= (users.len() * cfg.days as usize) as f64;
        let tolerance = 3.0 * 0.5 / ((users.len() * cfg.days as usize) as f64).sqrt();
        assert!(
            (result.control.efficiency - expected).abs() < tolerance,
            "efficiency {} vs oracle mean {expected} (tol {tolerance})",
            result.control.efficiency
        );
    }

    #[test]
    fn execution_conservation_holds() {
        let cfg = small_policy_cfg();
        let result = run_policy_comparison(&cfg).unwrap();
        assert_eq!(
            result.control.execution_volume,
            (cfg.population.size as u64)
                * u64::from(cfg.days)
                * cfg.policy_comparison.n_per_day as u64
        );
    }

    #[test]
    fn experiment_config_toml_round_trip() {
        let cfg = ExperimentConfig::assembly_preset();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
