//! Signal assembly and ensemble weight learning.
//!
//! Several per-metric activity maps are combined into one per-use-case map as
//! a weighted sum, with each metric's contribution gated by the user's
//! activity level on that metric's channel. The combination weights are
//! per use case (never per user) and are learned by minimizing the squared
//! rank-index loss between the weighted predicted ranks and the ground-truth
//! ranks of each user's active slots: a linear least-squares problem solved
//! exactly and projected onto non-negative weights.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{MetricId, NormalizedScore, TemporalActivityMap, UseCaseId, UserId};

/// Per-user channel activity gates, keyed by metric.
pub type ActivityLevels = BTreeMap<MetricId, f64>;

/// Per-use-case combination weights over an ordered metric list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssemblerSpecDoc", into = "AssemblerSpecDoc")]
pub struct AssemblerSpec {
    use_case: UseCaseId,
    metrics: Vec<MetricId>,
    weights: BTreeMap<MetricId, f64>,
}

impl AssemblerSpec {
    /// Metric order is the sorted weight-map key order, so the two fields can
    /// never drift apart.
    pub fn new(use_case: UseCaseId, weights: BTreeMap<MetricId, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "assembler for {use_case} has no metrics"
            )));
        }
        for (metric, &w) in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "weight for {metric} must be finite and non-negative, got {w}"
                )));
            }
        }
        if weights.values().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "assembler for {use_case} needs at least one strictly positive weight"
            )));
        }
        let metrics = weights.keys().cloned().collect();
        Ok(AssemblerSpec {
            use_case,
            metrics,
            weights,
        })
    }

    pub fn use_case(&self) -> &UseCaseId {
        &self.use_case
    }

    pub fn metrics(&self) -> &[MetricId] {
        &self.metrics
    }

    pub fn weights(&self) -> &BTreeMap<MetricId, f64> {
        &self.weights
    }

    pub fn weight(&self, metric: &MetricId) -> f64 {
        self.weights.get(metric).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssemblerSpecDoc {
    use_case: UseCaseId,
    weights: BTreeMap<MetricId, f64>,
}

impl From<AssemblerSpec> for AssemblerSpecDoc {
    fn from(spec: AssemblerSpec) -> Self {
        AssemblerSpecDoc {
            use_case: spec.use_case,
            weights: spec.weights,
        }
    }
}

impl TryFrom<AssemblerSpecDoc> for AssemblerSpec {
    type Error = Error;

    fn try_from(doc: AssemblerSpecDoc) -> Result<Self> {
        AssemblerSpec::new(doc.use_case, doc.weights)
    }
}

/// Combine per-metric maps into one per-use-case map.
///
/// Per slot: `sum_m weight_m * activity_m * score_m`, then divided by
/// `sum_m weight_m * activity_m` so the result stays in `[0, 1]` (the raw
/// weighted sum can exceed 1; positive scalar division leaves the ranking
/// unchanged). Slots missing from a metric score 0 for that metric. The slot
/// universe is the union across metrics.
pub fn assemble(
    spec: &AssemblerSpec,
    maps: &BTreeMap<MetricId, TemporalActivityMap>,
    activity_levels: &ActivityLevels,
) -> Result<TemporalActivityMap> {
    let mut user: Option<&UserId> = None;
    for map in maps.values() {
        match user {
            None => user = Some(map.user()),
            Some(u) if u == map.user() => {}
            Some(u) => {
                return Err(Error::InvalidArgument(format!(
                    "maps for users {u} and {} cannot be assembled together",
                    map.user()
                )))
            }
        }
    }
    let user = user
        .ok_or_else(|| Error::EmptyCandidates("no metric maps supplied to assemble".into()))?
        .clone();

    let mut effective = Vec::with_capacity(spec.metrics.len());
    for metric in &spec.metrics {
        let level = *activity_levels.get(metric).ok_or_else(|| {
            Error::InvalidArgument(format!("missing activity level for metric {metric}"))
        })?;
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::InvalidArgument(format!(
                "activity level for {metric} must lie in [0, 1], got {level}"
            )));
        }
        effective.push((metric, spec.weight(metric) * level));
    }
    let denom: f64 = effective.iter().map(|(_, e)| e).sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateAssembly);
    }

    let mut slots: Vec<usize> = maps.values().flat_map(|m| m.slot_indices()).collect();
    slots.sort_unstable();
    slots.dedup();
    if slots.is_empty() {
        return Err(Error::EmptyCandidates("no slots in any metric map".into()));
    }

    let entries: BTreeMap<usize, NormalizedScore> = slots
        .into_iter()
        .map(|slot| {
            let combo: f64 = effective
                .iter()
                .map(|(metric, eff)| {
                    let score = maps
                        .get(*metric)
                        .and_then(|m| m.get(slot))
                        .map_or(0.0, |s| s.value());
                    eff * score
                })
                .sum();
            (slot, NormalizedScore::clamped(combo / denom))
        })
        .collect();

    TemporalActivityMap::new(
        user,
        MetricId::new(format!("assembled:{}", spec.use_case)),
        entries,
    )
}

/// 0-based predicted rank of a slot within a map: the number of slots scoring
/// strictly higher, with ties broken by ascending slot index (the earlier slot
/// ranks better).
pub fn predicted_rank_index(map: &TemporalActivityMap, slot: usize) -> Result<usize> {
    let target = map
        .get(slot)
        .ok_or_else(|| Error::NotFound(format!("slot {slot} not present in map")))?;
    let rank = map
        .iter()
        .filter(|&(other, score)| {
            score.value() > target.value() || (score.value() == target.value() && other < slot)
        })
        .count();
    Ok(rank)
}

/// Ground-truth slot ordering for one (user, use case), best slot first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRanking {
    pub user: UserId,
    pub use_case: UseCaseId,
    ordered_slots: Vec<usize>,
}

impl GroundTruthRanking {
    pub fn new(user: UserId, use_case: UseCaseId, ordered_slots: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &slot in &ordered_slots {
            if !seen.insert(slot) {
                return Err(Error::InvalidArgument(format!(
                    "slot {slot} appears twice in a ground-truth ranking"
                )));
            }
        }
        Ok(GroundTruthRanking {
            user,
            use_case,
            ordered_slots,
        })
    }

    pub fn ordered_slots(&self) -> &[usize] {
        &self.ordered_slots
    }

    /// 0-based actual rank of a slot, if it is among the user's active slots.
    pub fn rank_of(&self, slot: usize) -> Option<usize> {
        self.ordered_slots.iter().position(|&s| s == slot)
    }
}

/// One (user, slot) training observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotObservation {
    pub slot: usize,
    /// Target rank. Integer positions when derived from a
    /// [`GroundTruthRanking`]; fixture files may carry continuous values.
    pub actual_rank: f64,
    pub metric_ranks: BTreeMap<MetricId, f64>,
}

/// All observations for one user in one use case's training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub user: UserId,
    pub activity_levels: ActivityLevels,
    pub observations: Vec<SlotObservation>,
}

impl TrainingExample {
    /// Build an example from a ground-truth ranking plus per-metric predicted
    /// ranks for every active slot.
    pub fn from_ground_truth(
        ground_truth: &GroundTruthRanking,
        metric_ranks: &BTreeMap<usize, BTreeMap<MetricId, f64>>,
        activity_levels: ActivityLevels,
    ) -> Result<Self> {
        let observations = ground_truth
            .ordered_slots
            .iter()
            .enumerate()
            .map(|(rank, &slot)| {
                let ranks = metric_ranks.get(&slot).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "no per-metric ranks for active slot {slot} of user {}",
                        ground_truth.user
                    ))
                })?;
                Ok(SlotObservation {
                    slot,
                    actual_rank: rank as f64,
                    metric_ranks: ranks.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingExample {
            user: ground_truth.user.clone(),
            activity_levels,
            observations,
        })
    }
}

/// Squared rank-index loss of a weight vector over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLossReport {
    pub loss: f64,
    /// Number of (user, active slot) terms averaged over.
    pub n: usize,
    pub weights: BTreeMap<MetricId, f64>,
}

/// Mean over all (user, active slot) pairs of
/// `(sum_m w_m * activity_m * rank_m - actual_rank)^2`.
///
/// The predicted side gates each metric's rank by the user's channel activity,
/// mirroring the assembly formula. Not scale-invariant: doubling all weights
/// doubles every predicted rank.
pub fn rank_loss(
    weights: &BTreeMap<MetricId, f64>,
    training: &[TrainingExample],
) -> Result<RankLossReport> {
    let mut n = 0usize;
    let mut total = 0.0f64;
    for example in training {
        for obs in &example.observations {
            let predicted: f64 = weights
                .iter()
                .map(|(metric, &w)| {
                    let gate = example.activity_levels.get(metric).copied().unwrap_or(0.0);
                    let rank = obs.metric_ranks.get(metric).copied().unwrap_or(0.0);
                    w * gate * rank
                })
                .sum();
            let diff = predicted - obs.actual_rank;
            total += diff * diff;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "rank loss needs at least one (user, slot) observation".into(),
        ));
    }
    Ok(RankLossReport {
        loss: total / n as f64,
        n,
        weights: weights.clone(),
    })
}

/// Weight learner settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Ridge strength used only when the normal equations are singular or
    /// underdetermined.
    pub ridge_lambda: f64,
    /// Numerical tolerance for the active-set iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            ridge_lambda: 1e-6,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Outcome of a weight-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightLearnReport {
    pub loss: f64,
    pub init_loss: f64,
    pub n: usize,
    /// Set when the exact normal equations were singular and the solve fell
    /// back to the ridge-regularized system.
    pub ridge_fallback: bool,
    /// Set when the solved weights were discarded in favor of the init vector
    /// (the solve did not improve on it, or produced an all-zero vector).
    pub kept_init: bool,
    /// Metrics whose gated rank column is zero on every observation: their
    /// weight is unidentifiable from this training set and pinned to 0.
    pub unidentifiable: Vec<MetricId>,
}

/// Learn non-negative combination weights minimizing the squared rank loss.
///
/// The loss is quadratic in the weights, so the learner assembles the normal
/// equations of the induced least-squares problem (rows: activity-gated
/// per-metric rank vectors; targets: actual ranks) and solves them exactly,
/// projecting onto the non-negative orthant with an active-set iteration.
/// A singular system falls back to a ridge-regularized solve and flags the
/// report. The returned weights never lose to `init` on the training loss.
#[allow(clippy::needless_range_loop)]
pub fn learn_weights(
    use_case: UseCaseId,
    training: &[TrainingExample],
    init: &BTreeMap<MetricId, f64>,
    config: &LearnerConfig,
) -> Result<(AssemblerSpec, WeightLearnReport)> {
    if training.is_empty() || training.iter().all(|e| e.observations.is_empty()) {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let metrics: Vec<MetricId> = {
        let mut set = std::collections::BTreeSet::new();
        for example in training {
            for obs in &example.observations {
                set.extend(obs.metric_ranks.keys().cloned());
            }
        }
        set.into_iter().collect()
    };
    if metrics.is_empty() {
        return Err(Error::InvalidArgument(
            "training observations carry no per-metric ranks".into(),
        ));
    }

    // Normal equations: gram = X^T X, rhs = X^T y over gated rank rows.
    let m = metrics.len();
    let mut gram = vec![vec![0.0f64; m]; m];
    let mut rhs = vec![0.0f64; m];
    let mut row = vec![0.0f64; m];
    for example in training {
        for obs in &example.observations {
            for (j, metric) in metrics.iter().enumerate() {
                let gate = example.activity_levels.get(metric).copied().unwrap_or(0.0);
                let rank = obs.metric_ranks.get(metric).copied().unwrap_or(0.0);
                row[j] = gate * rank;
            }
            for j in 0..m {
                rhs[j] += row[j] * obs.actual_rank;
                for k in j..m {
                    gram[j][k] += row[j] * row[k];
                }
            }
        }
    }
    for j in 0..m {
        for k in 0..j {
            gram[j][k] = gram[k][j];
        }
    }

    // An all-zero gram diagonal means the metric never contributes a gated
    // rank; the full normal equations would be singular on it.
    let unidentifiable: Vec<MetricId> = metrics
        .iter()
        .enumerate()
        .filter(|&(j, _)| gram[j][j] == 0.0)
        .map(|(_, m)| m.clone())
        .collect();

    let (solution, ridge_fallback) = nnls(&gram, &rhs, config);

    let mut learned: BTreeMap<MetricId, f64> = metrics
        .iter()
        .cloned()
        .zip(solution.iter().copied())
        .collect();

    let init_report = rank_loss(init, training)?;
    let learned_report = rank_loss(&learned, training)?;
    let mut kept_init = false;
    if learned_report.loss > init_report.loss || learned.values().all(|&w| w == 0.0) {
        learned = init.clone();
        kept_init = true;
    }
    let final_loss = if kept_init {
        init_report.loss
    } else {
        learned_report.loss
    };

    let spec = AssemblerSpec::new(use_case, learned)?;
    Ok((
        spec,
        WeightLearnReport {
            loss: final_loss,
            init_loss: init_report.loss,
            n: init_report.n,
            ridge_fallback,
            kept_init,
            unidentifiable,
        },
    ))
}

/// Gaussian elimination with partial pivoting; `None` when a pivot collapses.
#[allow(clippy::needless_range_loop)]
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in (col + 1)..n {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Solve the subsystem restricted to the columns in `support`; falls back to a
/// ridge-regularized solve (and reports it) when the subsystem is singular.
fn solve_support(
    gram: &[Vec<f64>],
    rhs: &[f64],
    support: &[usize],
    lambda: f64,
) -> (Vec<f64>, bool) {
    let k = support.len();
    let sub = |ridge: f64| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| gram[support[i]][support[j]] + if i == j { ridge } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let sub_rhs: Vec<f64> = support.iter().map(|&i| rhs[i]).collect();
    if let Some(z) = solve_dense(sub(0.0), sub_rhs.clone()) {
        return (z, false);
    }
    let ridged = solve_dense(sub(lambda.max(f64::MIN_POSITIVE)), sub_rhs)
        .expect("ridge-regularized gram matrix is positive definite");
    (ridged, true)
}

/// Non-negative least squares on the normal equations (active-set method).
///
/// Returns the weight vector and whether any subsystem needed the ridge
/// fallback. Metrics gated to zero everywhere produce all-zero gram columns;
/// their gradient never turns positive, so they stay out of the support and
/// land exactly at weight zero.
fn nnls(gram: &[Vec<f64>], rhs: &[f64], config: &LearnerConfig) -> (Vec<f64>, bool) {
    let m = rhs.len();
    let mut weights = vec![0.0f64; m];
    let mut in_support = vec![false; m];
    let mut used_ridge = false;
    let grad_scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);

    for _ in 0..config.max_iterations {
        // Gradient of the objective at the current point: rhs - gram * w.
        let grad: Vec<f64> = (0..m)
            .map(|j| {
                rhs[j]
                    - gram[j]
                        .iter()
                        .zip(&weights)
                        .map(|(g, w)| g * w)
                        .sum::<f64>()
            })
            .collect();
        let candidate = (0..m)
            .filter(|&j| !in_support[j] && grad[j] > config.tolerance * grad_scale)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        in_support[j] = true;

        loop {
            let support: Vec<usize> = (0..m).filter(|&i| in_support[i]).collect();
            let (z, ridged) = solve_support(gram, rhs, &support, config.ridge_lambda);
            used_ridge |= ridged;
            if z.iter().all(|&v| v > config.tolerance) {
                for (&i, &v) in support.iter().zip(&z) {
                    weights[i] = v;
                }
                break;
            }
            // Step toward z until the first weight hits zero, then drop it.
            let mut alpha = 1.0f64;
            for (&i, &v) in support.iter().zip(&z) {
                if v <= config.tolerance {
                    let denom = weights[i] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(weights[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (&i, &v) in support.iter().zip(&z) {
                weights[i] += alpha * (v - weights[i]);
                if weights[i] <= config.tolerance {
                    weights[i] = 0.0;
                    in_support[i] = false;
                }
            }
            if support.iter().all(|&i| !in_support[i]) {
                break;
            }
        }
    }
    (weights, used_ridge)
}

/// CSV row shape: `user,slot,actual_rank,metric,metric_rank,activity_level`.
#[derive(Debug, Serialize, Deserialize)]
struct TrainingCsvRow {
    user: String,
    slot: usize,
    actual_rank: f64,
    metric: String,
    metric_rank: f64,
    activity_level: f64,
}

/// Load training examples from CSV rows. One row per (user, slot, metric);
/// the actual rank must agree across a (user, slot)'s rows, and the activity
/// level across a (user, metric)'s rows.
pub fn read_training_csv<R: Read>(reader: R) -> Result<Vec<TrainingExample>> {
    let mut r = csv::Reader::from_reader(reader);
    #[allow(clippy::type_complexity)]
    let mut users: BTreeMap<
        UserId,
        (ActivityLevels, BTreeMap<usize, (f64, BTreeMap<MetricId, f64>)>),
    > = BTreeMap::new();
    for row in r.deserialize() {
        let row: TrainingCsvRow = row?;
        let user = UserId(row.user);
        let metric = MetricId(row.metric);
        let (levels, slots) = users.entry(user.clone()).or_default();
        match levels.get(&metric) {
            Some(&prev) if prev != row.activity_level => {
                return Err(Error::Parse(format!(
                    "conflicting activity levels for ({user}, {metric}): {prev} vs {}",
                    row.activity_level
                )));
            }
            _ => {
                levels.insert(metric.clone(), row.activity_level);
            }
        }
        let (actual, ranks) = slots
            .entry(row.slot)
            .or_insert_with(|| (row.actual_rank, BTreeMap::new()));
        if *actual != row.actual_rank {
            return Err(Error::Parse(format!(
                "conflicting actual ranks for ({user}, slot {}): {actual} vs {}",
                row.slot, row.actual_rank
            )));
        }
        ranks.insert(metric, row.metric_rank);
    }
    Ok(users
        .into_iter()
        .map(|(user, (activity_levels, slots))| TrainingExample {
            user,
            activity_levels,
            observations: slots
                .into_iter()
                .map(|(slot, (actual_rank, metric_ranks))| SlotObservation {
                    slot,
                    actual_rank,
                    metric_ranks,
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::build_activity_map;
    use crate::temporal::{MetricBounds, RawScore};

    fn map_from(user: &str, metric: &str, scores: &[(usize, f64)]) -> TemporalActivityMap {
        let raws: BTreeMap<usize, RawScore> = scores
            .iter()
            .map(|&(slot, v)| (slot, RawScore::new(v).unwrap()))
            .collect();
        let bounds = MetricBounds::new(MetricId::from(metric), 0.0, 1.0).unwrap();
        build_activity_map(UserId::from(user), MetricId::from(metric), &raws, &bounds).unwrap()
    }

    fn spec(weights: &[(&str, f64)]) -> AssemblerSpec {
        AssemblerSpec::new(
            UseCaseId::from("uc"),
            weights
                .iter()
                .map(|&(m, w)| (MetricId::from(m), w))
                .collect(),
        )
        .unwrap()
    }

    fn levels(pairs: &[(&str, f64)]) -> ActivityLevels {
        pairs.iter().map(|&(m, l)| (MetricId::from(m), l)).collect()
    }

    #[test]
    fn identity_assembly_single_metric() {
        let a = map_from("u", "a", &[(0, 0.2), (1, 0.9), (2, 0.4)]);
        let maps: BTreeMap<MetricId, TemporalActivityMap> =
            [(MetricId::from("a"), a.clone())].into();
        let out = assemble(&spec(&[("a", 1.0)]), &maps, &levels(&[("a", 1.0)])).unwrap();
        for (slot, score) in a.iter() {
            assert_eq!(out.get(slot).unwrap().value(), score.value());
        }
    }

    #[test]
    fn two_metric_boost_arithmetic() {
        // weights {a: 1, b: 0.01}, gates 1: (0.5 + 0.01) / 1.01.
        let a = map_from("u", "a", &[(0, 0.5)]);
        let b = map_from("u", "b", &[(0, 1.0)]);
        let maps: BTreeMap<MetricId, TemporalActivityMap> =
            [(MetricId::from("a"), a), (MetricId::from("b"), b)].into();
        let out = assemble(
            &spec(&[("a", 1.0), ("b", 0.01)]),
            &maps,
            &levels(&[("a", 1.0), ("b", 1.0)]),
        )
        .unwrap();
        let expected = 0.51 / 1.01;
        assert!((out.get(0).unwrap().value() - expected).abs() < 1e-12);
        assert!((out.get(0).unwrap().value() - 0.50495).abs() < 1e-5);
    }

    #[test]
    fn gated_out_channel_preserves_other_metric_order() {
        let a = map_from("u", "a", &[(0, 0.1), (1, 0.8), (2, 0.5)]);
        let b = map_from("u", "b", &[(0, 0.9), (1, 0.1), (2, 0.2)]);
        let maps: BTreeMap<MetricId, TemporalActivityMap> =
            [(MetricId::from("a"), a.clone()), (MetricId::from("b"), b)].into();
        let out = assemble(
            &spec(&[("a", 1.0), ("b", 5.0)]),
            &maps,
            &levels(&[("a", 1.0), ("b", 0.0)]),
        )
        .unwrap();
        let order = |m: &TemporalActivityMap| -> Vec<usize> {
            let mut slots: Vec<usize> = m.slot_indices().collect();
            slots.sort_by(|&x, &y| {
                m.get(y)
                    .unwrap()
                    .value()
                    .total_cmp(&m.get(x).unwrap().value())
                    .then(x.cmp(&y))
            });
            slots
        };
        assert_eq!(order(&out), order(&a));
    }

    #[test]
    fn all_gated_out_is_degenerate() {
        let a = map_from("u", "a", &[(0, 0.5)]);
        let maps: BTreeMap<MetricId, TemporalActivityMap> = [(MetricId::from("a"), a)].into();
        assert!(matches!(
            assemble(&spec(&[("a", 1.0)]), &maps, &levels(&[("a", 0.0)])),
            Err(Error::DegenerateAssembly)
        ));
    }

    #[test]
    fn missing_slots_score_zero() {
        let a = map_from("u", "a", &[(0, 1.0)]);
        let b = map_from("u", "b", &[(1, 1.0)]);
        let maps: BTreeMap<MetricId, TemporalActivityMap> =
            [(MetricId::from("a"), a), (MetricId::from("b"), b)].into();
        let out = assemble(
            &spec(&[("a", 1.0), ("b", 1.0)]),
            &maps,
            &levels(&[("a", 1.0), ("b", 1.0)]),
        )
        .unwrap();
        assert_eq!(out.get(0).unwrap().value(), 0.5);
        assert_eq!(out.get(1).unwrap().value(), 0.5);
    }

    #[test]
    fn rank_index_middle_element() {
        let m = map_from("u", "a", &[(0, 0.9), (1, 0.5), (2, 0.7)]);
        assert_eq!(predicted_rank_index(&m, 2).unwrap(), 1);
        assert_eq!(predicted_rank_index(&m, 0).unwrap(), 0);
        assert_eq!(predicted_rank_index(&m, 1).unwrap(), 2);
    }

    #[test]
    fn rank_index_ties_follow_slot_order() {
        let m = map_from("u", "a", &[(0, 0.5), (1, 0.5), (2, 0.5)]);
        for slot in 0..3 {
            assert_eq!(predicted_rank_index(&m, slot).unwrap(), slot);
        }
    }

    #[test]
    fn rank_index_absent_slot_errors() {
        let m = map_from("u", "a", &[(0, 0.5)]);
        assert!(matches!(
            predicted_rank_index(&m, 9),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn rank_index_is_bijection() {
        let m = map_from(
            "u",
            "a",
            &[(3, 0.1), (5, 0.9), (8, 0.9), (11, 0.3), (12, 0.1)],
        );
        let mut ranks: Vec<usize> = m
            .slot_indices()
            .map(|s| predicted_rank_index(&m, s).unwrap())
            .collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![0, 1, 2, 3, 4]);
    }

    #[allow(clippy::type_complexity)]
    fn example(
        user: &str,
        activity: &[(&str, f64)],
        obs: &[(usize, f64, &[(&str, f64)])],
    ) -> TrainingExample {
        TrainingExample {
            user: UserId::from(user),
            activity_levels: levels(activity),
            observations: obs
                .iter()
                .map(|&(slot, actual, ranks)| SlotObservation {
                    slot,
                    actual_rank: actual,
                    metric_ranks: ranks
                        .iter()
                        .map(|&(m, r)| (MetricId::from(m), r))
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_predictor_zero_loss() {
        let training = vec![example(
            "u",
            &[("a", 1.0)],
            &[(0, 0.0, &[("a", 0.0)]), (1, 1.0, &[("a", 1.0)])],
        )];
        let w: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 1.0)].into();
        let report = rank_loss(&w, &training).unwrap();
        assert_eq!(report.loss, 0.0);
        assert_eq!(report.n, 2);
    }

    #[test]
    fn single_term_squared_difference() {
        let training = vec![example("u", &[("a", 1.0)], &[(0, 0.0, &[("a", 2.0)])])];
        let w: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 1.0)].into();
        assert_eq!(rank_loss(&w, &training).unwrap().loss, 4.0);
    }

    #[test]
    fn loss_is_not_scale_invariant() {
        let training = vec![example(
            "u",
            &[("a", 1.0)],
            &[(0, 0.0, &[("a", 0.0)]), (1, 1.0, &[("a", 1.0)])],
        )];
        let w1: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 1.0)].into();
        let w2: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 2.0)].into();
        let l1 = rank_loss(&w1, &training).unwrap().loss;
        let l2 = rank_loss(&w2, &training).unwrap().loss;
        assert_ne!(l1, l2);
    }

    #[test]
    fn empty_training_errors() {
        let w: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 1.0)].into();
        assert!(rank_loss(&w, &[]).is_err());
    }

    #[test]
    fn learner_recovers_identity_weight() {
        let training = vec![example(
            "u",
            &[("a", 1.0)],
            &[
                (0, 0.0, &[("a", 0.0)]),
                (1, 1.0, &[("a", 1.0)]),
                (2, 2.0, &[("a", 2.0)]),
            ],
        )];
        let init: BTreeMap<MetricId, f64> = [(MetricId::from("a"), 0.3)].into();
        let (spec, report) = learn_weights(
            UseCaseId::from("uc"),
            &training,
            &init,
            &LearnerConfig::default(),
        )
        .unwrap();
        assert!((spec.weight(&MetricId::from("a")) - 1.0).abs() < 1e-9);
        assert!(report.loss < 1e-18);
        assert!(!report.ridge_fallback);
    }

    #[test]
    fn learner_recovers_small_weight_ratio() {
        // Targets generated from known weights 1.0 and 0.01 over two metrics.
        let mut training = Vec::new();
        let mut state = 42u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) % 24) as f64
        };
        for u in 0..50 {
            #[allow(clippy::type_complexity)]
            let obs: Vec<(usize, f64, Vec<(&str, f64)>)> = (0..8)
                .map(|slot| {
                    let ra = next();
                    let rb = next();
                    (slot, 1.0 * ra + 0.01 * rb, vec![("a", ra), ("b", rb)])
                })
                .collect();
            #[allow(clippy::type_complexity)]
            let obs_refs: Vec<(usize, f64, &[(&str, f64)])> = obs
                .iter()
                .map(|(s, t, v)| (*s, *t, v.as_slice()))
                .collect();
            training.push(example(
                &format!("u{u}"),
                &[("a", 1.0), ("b", 1.0)],
                &obs_refs,
            ));
        }
        let init: BTreeMap<MetricId, f64> =
            [(MetricId::from("a"), 1.0), (MetricId::from("b"), 1.0)].into();
        let (spec, report) = learn_weights(
            UseCaseId::from("uc"),
            &training,
            &init,
            &LearnerConfig::default(),
        )
        .unwrap();
        let ratio = spec.weight(&MetricId::from("b")) / spec.weight(&MetricId::from("a"));
        assert!(
            (ratio - 0.01).abs() / 0.01 < 0.1,
            "recovered ratio {ratio} off by more than 10%"
        );
        assert!(report.loss <= report.init_loss);
    }

    #[test]
    fn dead_channel_weight_driven_to_zero() {
        // Metric b is gated to zero for every user: unidentifiable, and its
        // gram column is all zeros.
        let training = vec![
            example(
                "u1",
                &[("a", 1.0), ("b", 0.0)],
                &[
                    (0, 0.0, &[("a", 0.0), ("b", 3.0)]),
                    (1, 1.0, &[("a", 1.0), ("b", 1.0)]),
                ],
            ),
            example(
                "u2",
                &[("a", 1.0), ("b", 0.0)],
                &[(0, 2.0, &[("a", 2.0), ("b", 0.0)])],
            ),
        ];
        let init: BTreeMap<MetricId, f64> =
            [(MetricId::from("a"), 1.0), (MetricId::from("b"), 1.0)].into();
        let (spec, report) = learn_weights(
            UseCaseId::from("uc"),
            &training,
            &init,
            &LearnerConfig::default(),
        )
        .unwrap();
        assert!(spec.weight(&MetricId::from("b")).abs() < 1e-9);
        assert!((spec.weight(&MetricId::from("a")) - 1.0).abs() < 1e-9);
        assert_eq!(report.unidentifiable, vec![MetricId::from("b")]);
    }

    #[test]
    fn training_csv_round_trip_shape() {
        let csv = "user,slot,actual_rank,metric,metric_rank,activity_level\n\
                   u1,0,0,a,1,1.0\n\
                   u1,0,0,b,2,0.5\n\
                   u1,3,1,a,0,1.0\n\
                   u1,3,1,b,5,0.5\n\
                   u2,0,0,a,0,0.25\n";
        let examples = read_training_csv(csv.as_bytes()).unwrap();
        assert_eq!(examples.len(), 2);
        let u1 = &examples[0];
        assert_eq!(u1.user.as_str(), "u1");
        assert_eq!(u1.observations.len(), 2);
        assert_eq!(u1.activity_levels[&MetricId::from("b")], 0.5);
        assert_eq!(u1.observations[1].metric_ranks[&MetricId::from("b")], 5.0);
    }

    #[test]
    fn training_csv_rejects_conflicting_targets() {
        let csv = "user,slot,actual_rank,metric,metric_rank,activity_level\n\
                   u1,0,0,a,1,1.0\n\
                   u1,0,2,b,2,1.0\n";
        assert!(read_training_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn spec_requires_positive_weight() {
        let weights: BTreeMap<MetricId, f64> =
            [(MetricId::from("a"), 0.0), (MetricId::from("b"), 0.0)].into();
        assert!(AssemblerSpec::new(UseCaseId::from("uc"), weights).is_err());
        let negative: BTreeMap<MetricId, f64> = [(MetricId::from("a"), -1.0)].into();
        assert!(AssemblerSpec::new(UseCaseId::from("uc"), negative).is_err());
    }

    #[test]
    fn ground_truth_rejects_duplicates() {
        assert!(GroundTruthRanking::new(
            UserId::from("u"),
            UseCaseId::from("uc"),
            vec![3, 1, 3]
        )
        .is_err());
    }
}
