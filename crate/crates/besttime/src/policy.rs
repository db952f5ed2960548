//! Best-time policies: turning a ranked activity map into execution timestamps.
//!
//! Two policy families are supported. Top-N simply takes the highest-scoring
//! slots. Avoid-nearby repeatedly takes the current peak and then removes the
//! peak together with every slot within `w` slot indices of it, which spreads
//! the chosen executions out; low-priority use cases additionally forfeit the
//! single global peak before any selection, leaving it to high-priority
//! tenants. A uniform random delay within the chosen slot flattens
//! infrastructure load.
//!
//! Everything here is a pure function over immutable maps; the RNG is derived
//! from a caller-supplied seed per request, so plans replay byte-identically.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::StableHasher;
use crate::temporal::{partition_range, TemporalActivityMap, TimeSlot, UseCaseId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TopN,
    AvoidNearby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    High,
    Low,
}

/// Policy selection for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestTimePolicy {
    pub kind: PolicyKind,
    /// Avoidance window in slot indices; meaningful for `AvoidNearby` only.
    /// `w = 0` degenerates to top-N.
    #[serde(default)]
    pub w: usize,
    #[serde(default)]
    pub priority: Priority,
    /// When avoidance exhausts the map before `n` picks, refill from the
    /// window-removed slots instead of underfilling the plan.
    #[serde(default = "default_refill", skip_serializing_if = "is_default_refill")]
    pub refill: bool,
}

fn default_refill() -> bool {
    true
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_default_refill(refill: &bool) -> bool {
    *refill
}

impl Default for BestTimePolicy {
    fn default() -> Self {
        BestTimePolicy {
            kind: PolicyKind::TopN,
            w: 0,
            priority: Priority::High,
            refill: true,
        }
    }
}

impl BestTimePolicy {
    pub fn top_n(priority: Priority) -> Self {
        BestTimePolicy {
            kind: PolicyKind::TopN,
            w: 0,
            priority,
            refill: true,
        }
    }

    pub fn avoid_nearby(w: usize, priority: Priority) -> Self {
        BestTimePolicy {
            kind: PolicyKind::AvoidNearby,
            w,
            priority,
            refill: true,
        }
    }

    pub fn without_refill(mut self) -> Self {
        self.refill = false;
        self
    }
}

/// One scheduling request as submitted by a tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingRequest {
    pub use_case: UseCaseId,
    pub user: UserId,
    pub t_start: i64,
    pub t_end: i64,
    /// Number of execution timestamps requested.
    pub n: usize,
    /// Slot length in seconds.
    pub slot_length: i64,
    /// Single metric to rank on; `None` uses the use case's configured
    /// assembler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_spec: Option<String>,
    /// Policy override; `None` uses the use case's configured policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<BestTimePolicy>,
    /// Exploration traffic: selects slots uniformly at random instead of by
    /// rank, for training-data collection. Exploration rates are the
    /// caller's business.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub explore: bool,
}

impl SchedulingRequest {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument(
                "request must ask for at least one slot".into(),
            ));
        }
        if self.slot_length <= 0 {
            return Err(Error::InvalidArgument(format!(
                "slot length must be positive, got {}",
                self.slot_length
            )));
        }
        if self.t_end - self.t_start < self.slot_length {
            return Err(Error::InvalidArgument(format!(
                "range [{}, {}) is shorter than one slot of {}s",
                self.t_start, self.t_end, self.slot_length
            )));
        }
        Ok(())
    }
}

/// The plan returned to the job scheduler, ordered by ascending timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub use_case: UseCaseId,
    pub user: UserId,
    /// Chosen slot indices, parallel to `timestamps`.
    pub slots: Vec<usize>,
    /// Jittered execution timestamps, ascending.
    pub timestamps: Vec<i64>,
    /// RNG seed used for jitter (and exploration), recorded for replay.
    pub seed: u64,
    /// Fewer than `n` timestamps could be produced.
    pub truncated: bool,
    /// Slots that entered the plan through the avoidance-exhaustion refill.
    pub refilled: Vec<usize>,
    /// The map was a missing-signal uniform fallback; selection was
    /// seeded-random rather than ranked.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub uniform_fallback: bool,
    /// Selection was randomized by the request's exploration flag.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub explored: bool,
}

/// Slot choices of one policy run, best-first, before jitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyOutcome {
    pub slots: Vec<usize>,
    /// Subset of `slots` that came from the refill pass.
    pub refilled: Vec<usize>,
    pub truncated: bool,
}

/// Highest-scoring entry; ties resolve to the lowest slot index so replayed
/// decisions are deterministic.
fn best_slot(entries: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&slot, &score) in entries {
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((slot, score)),
        }
    }
    best.map(|(slot, _)| slot)
}

fn ranked_entries(map: &TemporalActivityMap) -> BTreeMap<usize, f64> {
    map.iter()
        .map(|(slot, score)| (slot, score.value()))
        .collect()
}

/// Take the `min(n, |map|)` highest-scoring slots, best first.
pub fn top_n_policy(map: &TemporalActivityMap, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if map.is_empty() {
        return Err(Error::EmptyCandidates("activity map is empty".into()));
    }
    let mut slots: Vec<(usize, f64)> = map.iter().map(|(s, v)| (s, v.value())).collect();
    slots.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(slots.into_iter().take(n).map(|(s, _)| s).collect())
}

/// Avoid-w-nearby selection with the exhaustion refill enabled.
pub fn avoid_nearby_policy(
    map: &TemporalActivityMap,
    n: usize,
    w: usize,
    priority: Priority,
) -> Result<PolicyOutcome> {
    avoid_nearby_policy_opts(map, n, w, priority, true)
}

/// Avoid-w-nearby selection.
///
/// Low priority first removes the single top slot (only that slot, not its
/// neighbors). Then, repeatedly: take the current top slot, and remove every
/// slot `t` with `best - w <= t <= best + w` (slot-index distance). When the
/// map exhausts before `n` picks and `refill` is on, the remaining picks come
/// from window-removed (never chosen, never tier-removed) slots in original
/// score order; those are reported in `refilled`. Without refill, or when the
/// refill pool runs dry, the outcome is truncated.
pub fn avoid_nearby_policy_opts(
    map: &TemporalActivityMap,
    n: usize,
    w: usize,
    priority: Priority,
    refill: bool,
) -> Result<PolicyOutcome> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if map.is_empty() {
        return Err(Error::EmptyCandidates("activity map is empty".into()));
    }
    let mut remaining = ranked_entries(map);
    let mut removed_pool: Vec<(usize, f64)> = Vec::new();

    if priority == Priority::Low {
        // The forfeited peak stays out of the refill pool: low priority must
        // never execute on the global top slot.
        let top = best_slot(&remaining).expect("map is non-empty");
        remaining.remove(&top);
    }

    let mut chosen = Vec::with_capacity(n);
    while chosen.len() < n {
        let Some(best) = best_slot(&remaining) else { break };
        chosen.push(best);
        let lo = best.saturating_sub(w);
        let hi = best.saturating_add(w);
        let window: Vec<usize> = remaining.range(lo..=hi).map(|(&s, _)| s).collect();
        for slot in window {
            let score = remaining.remove(&slot).expect("slot was present");
            if slot != best {
                removed_pool.push((slot, score));
            }
        }
    }

    let mut refilled = Vec::new();
    if refill && chosen.len() < n {
        removed_pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (slot, _) in removed_pool {
            if chosen.len() >= n {
                break;
            }
            chosen.push(slot);
            refilled.push(slot);
        }
    }

    Ok(PolicyOutcome {
        truncated: chosen.len() < n,
        slots: chosen,
        refilled,
    })
}

/// Uniform integer delay in `[0, slot.length)` added to each slot start.
///
/// Draws are independent per slot from a ChaCha stream seeded with `seed`, so
/// the same seed always reproduces the same timestamps.
pub fn apply_jitter(slots: &[TimeSlot], seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots
        .iter()
        .map(|slot| slot.start + rng.gen_range(0..slot.length.max(1)))
        .collect()
}

/// Run policy selection plus jitter for one request.
///
/// The map must have been built over `partition_range(t_start, t_end,
/// slot_length)`; slot indices outside that candidate set are rejected.
pub fn schedule(
    request: &SchedulingRequest,
    map: &TemporalActivityMap,
    seed: u64,
) -> Result<ExecutionPlan> {
    request.validate()?;
    let candidate_slots = partition_range(request.t_start, request.t_end, request.slot_length)?;
    if map.is_empty() {
        return Err(Error::EmptyCandidates("activity map is empty".into()));
    }
    if map.max_slot() >= candidate_slots.len() {
        return Err(Error::InvalidArgument(format!(
            "map references slot {} outside the {}-slot candidate set",
            map.max_slot(),
            candidate_slots.len()
        )));
    }

    let policy = request.policy.unwrap_or_default();
    let outcome = if request.explore {
        explore_selection(map, request.n, seed)
    } else {
        select_with_policy(map, request.n, policy)?
    };

    // Jitter draws happen in pick order; the plan is then sorted by time.
    let picked: Vec<TimeSlot> = outcome.slots.iter().map(|&s| candidate_slots[s]).collect();
    let timestamps = apply_jitter(&picked, seed);
    let mut plan_entries: Vec<(i64, usize)> = timestamps
        .into_iter()
        .zip(outcome.slots.iter().copied())
        .collect();
    plan_entries.sort_unstable();

    Ok(ExecutionPlan {
        use_case: request.use_case.clone(),
        user: request.user.clone(),
        slots: plan_entries.iter().map(|&(_, s)| s).collect(),
        timestamps: plan_entries.iter().map(|&(t, _)| t).collect(),
        seed,
        truncated: outcome.truncated,
        refilled: outcome.refilled,
        uniform_fallback: false,
        explored: request.explore,
    })
}

fn select_with_policy(
    map: &TemporalActivityMap,
    n: usize,
    policy: BestTimePolicy,
) -> Result<PolicyOutcome> {
    match policy.kind {
        PolicyKind::AvoidNearby if policy.w > 0 => {
            avoid_nearby_policy_opts(map, n, policy.w, policy.priority, policy.refill)
        }
        // w = 0 avoidance and plain top-N share the same selection, modulo
        // the low-priority peak forfeit.
        _ => {
            let mut entries = ranked_entries(map);
            if policy.priority == Priority::Low {
                if let Some(top) = best_slot(&entries) {
                    entries.remove(&top);
                }
            }
            if entries.is_empty() {
                return Ok(PolicyOutcome {
                    slots: Vec::new(),
                    refilled: Vec::new(),
                    truncated: true,
                });
            }
            let mut slots: Vec<(usize, f64)> = entries.into_iter().collect();
            slots.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let chosen: Vec<usize> = slots.into_iter().take(n).map(|(s, _)| s).collect();
            Ok(PolicyOutcome {
                truncated: chosen.len() < n,
                slots: chosen,
                refilled: Vec::new(),
            })
        }
    }
}

/// Uniform random selection of up to `n` distinct slots; used for exploration
/// traffic and for missing-signal fallback plans.
fn explore_selection(map: &TemporalActivityMap, n: usize, seed: u64) -> PolicyOutcome {
    let mut rng =
        ChaCha8Rng::seed_from_u64(StableHasher::new(seed).write_str("explore").finish());
    let mut slots: Vec<usize> = map.slot_indices().collect();
    let take = n.min(slots.len());
    // Partial Fisher-Yates: only the first `take` positions matter.
    for i in 0..take {
        let j = rng.gen_range(i..slots.len());
        slots.swap(i, j);
    }
    slots.truncate(take);
    PolicyOutcome {
        truncated: take < n,
        slots,
        refilled: Vec::new(),
    }
}
