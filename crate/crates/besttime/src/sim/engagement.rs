//! Engagement realization for simulated executions.
//!
//! An execution's engagement probability starts from the user's ground-truth
//! curve value at its slot, then two interaction effects apply:
//!
//! - within-window decay: an execution landing within `decay_window` slot
//!   indices of an earlier same-day execution realizes its probability times
//!   `decay` (selection on one slot degrades nearby slots);
//! - cannibalization: when `c` use cases execute for the same user in the
//!   same slot, each realizes probability times `share(c)`, with `share(1) =
//!   1` and `share` non-increasing.
//!
//! Both effects have "off" settings (`decay = 1`, `share = none`) so
//! experiments can prove the null case. Bernoulli draws are keyed by
//! `(seed, user, day, use case, slot)` through the stable hash, which makes
//! outcomes independent of iteration order and worker count, and maximally
//! paired across experiment arms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ExecutionPlan;
use crate::seeding::{unit_from_hash, StableHasher};
use crate::temporal::{epoch_day, ChannelId, TimeSlot, UseCaseId, UserId};

use super::population::SyntheticUser;

/// How engagement probability splits across same-slot competitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShareRule {
    /// `share(c) = 1`: no cannibalization.
    None,
    /// `share(c) = 1/c`.
    InverseCount,
    /// `share(c) = table[c-1]` (clamped to the last entry beyond the table).
    Table(Vec<f64>),
}

impl ShareRule {
    pub fn share(&self, competitors: usize) -> f64 {
        let c = competitors.max(1);
        match self {
            ShareRule::None => 1.0,
            ShareRule::InverseCount => 1.0 / c as f64,
            ShareRule::Table(t) => {
                if t.is_empty() {
                    1.0
                } else {
                    t[(c - 1).min(t.len() - 1)]
                }
            }
        }
    }

    /// `share(1)` must be 1 and the rule non-increasing in `c`.
    pub fn validate(&self) -> Result<()> {
        if let ShareRule::Table(t) = self {
            if t.first().is_some_and(|&s| (s - 1.0).abs() > 1e-12) {
                return Err(Error::InvalidArgument(
                    "share table must start at 1.0".into(),
                ));
            }
            if t.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidArgument(
                    "share table must be non-increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Interaction model for simulated engagement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementModel {
    /// Probability multiplier for executions within `decay_window` of an
    /// earlier same-day execution; 1.0 disables the effect.
    pub decay: f64,
    /// Window in slot indices for the decay effect.
    pub decay_window: usize,
    pub share: ShareRule,
}

impl Default for EngagementModel {
    fn default() -> Self {
        EngagementModel {
            decay: 0.5,
            decay_window: 1,
            share: ShareRule::InverseCount,
        }
    }
}

impl EngagementModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::InvalidArgument(format!(
                "decay must lie in [0, 1], got {}",
                self.decay
            )));
        }
        self.share.validate()
    }
}

/// Realized outcome of one simulated execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub user: UserId,
    pub use_case: UseCaseId,
    pub slot: usize,
    pub timestamp: i64,
    /// Effective probability after decay and cannibalization.
    pub probability: f64,
    pub engaged: bool,
}

/// Simulate all of one user's executions for one day.
///
/// `executions` are `(use_case, slot index, timestamp)` triples referencing
/// `slots`; they may span multiple use cases.
pub fn simulate_user_day(
    user: &SyntheticUser,
    channel: &ChannelId,
    executions: &[(UseCaseId, usize, i64)],
    slots: &[TimeSlot],
    model: &EngagementModel,
    seed: u64,
) -> Vec<ExecutionOutcome> {
    // Deterministic execution order: by timestamp, then use case, then slot.
    let mut ordered: Vec<&(UseCaseId, usize, i64)> = executions.iter().collect();
    ordered.sort_by(|a, b| (a.2, &a.0, a.1).cmp(&(b.2, &b.0, b.1)));

    // Same-slot competitor counts per (day, slot).
    let mut competitors: BTreeMap<(i64, usize), usize> = BTreeMap::new();
    for (_, slot_idx, _) in &ordered {
        let day = epoch_day(slots[*slot_idx].start);
        *competitors.entry((day, *slot_idx)).or_insert(0) += 1;
    }

    let mut outcomes = Vec::with_capacity(ordered.len());
    for (i, (use_case, slot_idx, ts)) in ordered.iter().enumerate() {
        let slot = slots[*slot_idx];
        let day = epoch_day(slot.start);
        let base = user.engagement_prob(channel, &slot);

        let decayed = model.decay < 1.0
            && ordered[..i].iter().any(|(_, prior_slot, _)| {
                let prior = slots[*prior_slot];
                epoch_day(prior.start) == day
                    && prior_slot.abs_diff(*slot_idx) <= model.decay_window
            });
        let share = model.share.share(competitors[&(day, *slot_idx)]);
        let probability =
            (base * if decayed { model.decay } else { 1.0 } * share).clamp(0.0, 1.0);

        let draw = unit_from_hash(
            StableHasher::new(seed)
                .write_str("engage")
                .write_str(user.id.as_str())
                .write_i64(day)
                .write_str(use_case.as_str())
                .write_u64(*slot_idx as u64)
                .finish(),
        );
        outcomes.push(ExecutionOutcome {
            user: user.id.clone(),
            use_case: (*use_case).clone(),
            slot: *slot_idx,
            timestamp: *ts,
            probability,
            engaged: draw < probability,
        });
    }
    outcomes
}

/// Simulate one day of executions for a whole population.
///
/// Plans may belong to different use cases; all of a user's executions
/// interact through decay and cannibalization. Users without a plan produce
/// no outcomes.
pub fn simulate_day(
    users: &[SyntheticUser],
    channel: &ChannelId,
    plans: &[ExecutionPlan],
    slots: &[TimeSlot],
    model: &EngagementModel,
    seed: u64,
) -> Result<Vec<ExecutionOutcome>> {
    model.validate()?;
    let mut per_user: BTreeMap<&UserId, Vec<(UseCaseId, usize, i64)>> = BTreeMap::new();
    for plan in plans {
        let entry = per_user.entry(&plan.user).or_default();
        for (&slot, &ts) in plan.slots.iter().zip(&plan.timestamps) {
            if slot >= slots.len() {
                return Err(Error::InvalidArgument(format!(
                    "plan for {} references slot {slot} outside the candidate set",
                    plan.user
                )));
            }
            entry.push((plan.use_case.clone(), slot, ts));
        }
    }
    let by_id: BTreeMap<&UserId, &SyntheticUser> =
        users.iter().map(|u| (&u.id, u)).collect();
    let mut outcomes = Vec::new();
    for (user_id, executions) in per_user {
        let user = by_id.get(user_id).ok_or_else(|| {
            Error::NotFound(format!("plan references unknown user {user_id}"))
        })?;
        outcomes.extend(simulate_user_day(
            user, channel, &executions, slots, model, seed,
        ));
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::population::{build_curve, Bump, CurveParams, SyntheticUser};
    use crate::temporal::partition_range;

    fn flat_user(prob: f64) -> SyntheticUser {
        let params = CurveParams {
            bumps: vec![Bump {
                center_hour: 12.0,
                amplitude: prob,
                plateau_half: 12.0,
                shoulder_sigma: 1.0,
            }],
            base_rate: 0.0,
            day_factors: [1.0; 7],
        };
        let mut curves = BTreeMap::new();
        curves.insert(ChannelId::from("a"), build_curve(&params));
        SyntheticUser {
            id: UserId::from("u"),
            utc_offset_minutes: 0,
            curves,
            activity: BTreeMap::new(),
            noise_scale: 0.0,
        }
    }

    fn day_slots() -> Vec<TimeSlot> {
        partition_range(0, 86_400, 3600).unwrap()
    }

    #[test]
    fn certainty_without_competition() {
        let user = flat_user(1.0);
        let model = EngagementModel {
            decay: 1.0,
            decay_window: 1,
            share: ShareRule::None,
        };
        let out = simulate_user_day(
            &user,
            &ChannelId::from("a"),
            &[(UseCaseId::from("uc"), 9, 9 * 3600)],
            &day_slots(),
            &model,
            7,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].probability, 1.0);
        assert!(out[0].engaged);
    }

    #[test]
    fn same_slot_competitors_split() {
        let user = flat_user(0.8);
        let model = EngagementModel {
            decay: 1.0,
            decay_window: 1,
            share: ShareRule::Table(vec![1.0, 0.5]),
        };
        let out = simulate_user_day(
            &user,
            &ChannelId::from("a"),
            &[
                (UseCaseId::from("uc1"), 9, 9 * 3600 + 10),
                (UseCaseId::from("uc2"), 9, 9 * 3600 + 20),
            ],
            &day_slots(),
            &model,
            7,
        );
        assert!(out.iter().all(|o| (o.probability - 0.4).abs() < 1e-12));
    }

    #[test]
    fn decay_applies_to_later_nearby_execution() {
        let user = flat_user(0.8);
        let model = EngagementModel {
            decay: 0.5,
            decay_window: 1,
            share: ShareRule::None,
        };
        let out = simulate_user_day(
            &user,
            &ChannelId::from("a"),
            &[
                (UseCaseId::from("uc"), 9, 9 * 3600),
                (UseCaseId::from("uc"), 10, 10 * 3600),
            ],
            &day_slots(),
            &model,
            7,
        );
        assert_eq!(out[0].probability, 0.8);
        assert_eq!(out[1].probability, 0.4);
    }

    #[test]
    fn decay_skips_distant_executions() {
        let user = flat_user(0.8);
        let model = EngagementModel {
            decay: 0.5,
            decay_window: 1,
            share: ShareRule::None,
        };
        let out = simulate_user_day(
            &user,
            &ChannelId::from("a"),
            &[
                (UseCaseId::from("uc"), 9, 9 * 3600),
                (UseCaseId::from("uc"), 15, 15 * 3600),
            ],
            &day_slots(),
            &model,
            7,
        );
        assert!(out.iter().all(|o| o.probability == 0.8));
    }

    #[test]
    fn draws_replay_and_ignore_input_order() {
        let user = flat_user(0.5);
        let model = EngagementModel::default();
        let execs = vec![
            (UseCaseId::from("uc1"), 9, 9 * 3600),
            (UseCaseId::from("uc2"), 20, 20 * 3600),
        ];
        let mut reversed = execs.clone();
        reversed.reverse();
        let a = simulate_user_day(&user, &ChannelId::from("a"), &execs, &day_slots(), &model, 1);
        let b = simulate_user_day(
            &user,
            &ChannelId::from("a"),
            &reversed,
            &day_slots(),
            &model,
            1,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn share_rule_validation() {
        assert!(ShareRule::Table(vec![1.0, 0.5, 0.2]).validate().is_ok());
        assert!(ShareRule::Table(vec![0.9]).validate().is_err());
        assert!(ShareRule::Table(vec![1.0, 0.5, 0.7]).validate().is_err());
        assert_eq!(ShareRule::InverseCount.share(4), 0.25);
        assert_eq!(ShareRule::None.share(10), 1.0);
        assert_eq!(ShareRule::Table(vec![1.0, 0.5]).share(9), 0.5);
    }

    #[test]
    fn simulate_day_groups_across_use_cases() {
        let mut u1 = flat_user(1.0);
        u1.id = UserId::from("u1");
        let mut u2 = flat_user(1.0);
        u2.id = UserId::from("u2");
        let users = vec![u1, u2];
        let slots = day_slots();
        let plan = |user: &str, uc: &str, slot: usize| ExecutionPlan {
            use_case: UseCaseId::from(uc),
            user: UserId::from(user),
            slots: vec![slot],
            timestamps: vec![slot as i64 * 3600],
            seed: 0,
            truncated: false,
            refilled: vec![],
            uniform_fallback: false,
            explored: false,
        };
        let plans = vec![
            plan("u1", "uc1", 9),
            plan("u1", "uc2", 9),
            plan("u2", "uc1", 5),
        ];
        let model = EngagementModel {
            decay: 1.0,
            decay_window: 0,
            share: ShareRule::InverseCount,
        };
        let out = simulate_day(&users, &ChannelId::from("a"), &plans, &slots, &model, 3).unwrap();
        assert_eq!(out.len(), 3);
        // u1's two executions collide: share(2) = 0.5 each.
        let u1_probs: Vec<f64> = out
            .iter()
            .filter(|o| o.user.as_str() == "u1")
            .map(|o| o.probability)
            .collect();
        assert_eq!(u1_probs, vec![0.5, 0.5]);
        let u2 = out.iter().find(|o| o.user.as_str() == "u2").unwrap();
        assert_eq!(u2.probability, 1.0);
    }

    #[test]
    fn simulate_day_rejects_unknown_users() {
        let users = vec![flat_user(1.0)];
        let slots = day_slots();
        let plan = ExecutionPlan {
            use_case: UseCaseId::from("uc"),
            user: UserId::from("ghost"),
            slots: vec![0],
            timestamps: vec![10],
            seed: 0,
            truncated: false,
            refilled: vec![],
            uniform_fallback: false,
            explored: false,
        };
        assert!(matches!(
            simulate_day(
                &users,
                &ChannelId::from("a"),
                &[plan],
                &slots,
                &EngagementModel::default(),
                1
            ),
            Err(Error::NotFound(_))
        ));
    }
}
