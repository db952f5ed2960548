//! Synthetic user populations with weekly engagement curves.
//!
//! Each user carries, per channel, a 168-entry (day-of-week x hour) vector of
//! ground-truth engagement probabilities built from 1-3 circular bumps over
//! the 24-hour cycle. Bumps can have a flat top (`plateau_half` hours on each
//! side of the center) with Gaussian shoulders, so populations range from
//! sharply peaked to broad near-equal activity windows. Curves wrap across
//! the hour 23/0 boundary.
//!
//! Everything derives from per-user substreams of the master seed: the same
//! (config, seed) pair always generates the same population.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::StableHasher;
use crate::temporal::{day_of_week, hour_of_day, ChannelId, TimeSlot, UserId, DAYS_PER_WEEK, HOURS_PER_DAY};

const WEEK_HOURS: usize = DAYS_PER_WEEK * HOURS_PER_DAY;

/// One circular bump of an engagement curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center_hour: f64,
    pub amplitude: f64,
    /// Hours on each side of the center at full amplitude.
    pub plateau_half: f64,
    /// Gaussian falloff width beyond the plateau.
    pub shoulder_sigma: f64,
}

impl Bump {
    /// Bump value at an hour of day, wrapping on the 24-hour circle.
    pub fn value(&self, hour: f64) -> f64 {
        let d = {
            let raw = (hour - self.center_hour).rem_euclid(24.0);
            raw.min(24.0 - raw)
        };
        if d <= self.plateau_half {
            self.amplitude
        } else {
            let s = self.shoulder_sigma.max(1e-6);
            let x = d - self.plateau_half;
            self.amplitude * (-x * x / (2.0 * s * s)).exp()
        }
    }
}

/// Curve parameters for one (user, channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub bumps: Vec<Bump>,
    pub base_rate: f64,
    /// Per-day multiplier on the bump sum; keeps the within-day argmax fixed.
    pub day_factors: [f64; DAYS_PER_WEEK],
}

/// Materialize a 168-entry weekly probability vector.
pub fn build_curve(params: &CurveParams) -> Vec<f64> {
    let mut curve = vec![0.0; WEEK_HOURS];
    for d in 0..DAYS_PER_WEEK {
        for h in 0..HOURS_PER_DAY {
            let bumps: f64 = params.bumps.iter().map(|b| b.value(h as f64)).sum();
            curve[d * HOURS_PER_DAY + h] =
                (params.base_rate + params.day_factors[d] * bumps).clamp(0.0, 1.0);
        }
    }
    curve
}

/// A simulated user: ground-truth engagement curves plus channel activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub id: UserId,
    pub utc_offset_minutes: i32,
    /// Weekly engagement probability per channel, indexed `dow * 24 + hour`
    /// in the user's local time.
    pub curves: BTreeMap<ChannelId, Vec<f64>>,
    /// Channel activity gates in `[0, 1]`.
    pub activity: BTreeMap<ChannelId, f64>,
    /// Prediction noise scale used when deriving predicted maps for this user.
    pub noise_scale: f64,
}

impl SyntheticUser {
    /// Ground-truth engagement probability for an execution in `slot`.
    pub fn engagement_prob(&self, channel: &ChannelId, slot: &TimeSlot) -> f64 {
        let Some(curve) = self.curves.get(channel) else {
            return 0.0;
        };
        let local = slot.start + i64::from(self.utc_offset_minutes) * 60;
        let idx = day_of_week(local) as usize * HOURS_PER_DAY + hour_of_day(local) as usize;
        curve[idx]
    }
}

/// Population generator settings. Ranges are `[low, high]` pairs sampled
/// uniformly per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub size: usize,
    pub channels: Vec<String>,
    /// Probability that a secondary channel shares the primary channel's
    /// curve parameters outright (1.0: identical curves; 0.0: independent).
    pub correlation: f64,
    pub bumps: [usize; 2],
    pub center_hours: [f64; 2],
    pub amplitude: [f64; 2],
    pub plateau_half: [f64; 2],
    pub shoulder_sigma: [f64; 2],
    pub base_rate: f64,
    /// Day factors are drawn from `[1 - jitter, 1]`.
    pub day_amplitude_jitter: f64,
    /// Channel activity gate range.
    pub activity: [f64; 2],
    /// Probability that a user's activity on a channel is exactly zero
    /// (users with no presence on that channel at all), independent per
    /// channel. The rest draw uniformly from `activity`.
    pub inactive_probability: f64,
    /// Prediction noise scale attached to each user.
    pub noise_scale: f64,
    /// UTC offsets (minutes) assigned round-robin-free: uniform choice.
    pub utc_offsets_minutes: Vec<i32>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            size: 1000,
            channels: vec!["a".into()],
            correlation: 1.0,
            bumps: [1, 3],
            center_hours: [0.0, 24.0],
            amplitude: [0.3, 0.8],
            plateau_half: [0.0, 1.0],
            shoulder_sigma: [1.5, 3.0],
            base_rate: 0.02,
            day_amplitude_jitter: 0.1,
            activity: [0.0, 1.0],
            inactive_probability: 0.0,
            noise_scale: 0.05,
            utc_offsets_minutes: vec![0],
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] >= range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

fn draw_curve_params(rng: &mut ChaCha8Rng, cfg: &PopulationConfig) -> CurveParams {
    let n_bumps = if cfg.bumps[0] >= cfg.bumps[1] {
        cfg.bumps[0].max(1)
    } else {
        rng.gen_range(cfg.bumps[0].max(1)..=cfg.bumps[1])
    };
    let bumps = (0..n_bumps)
        .map(|_| Bump {
            center_hour: uniform(rng, cfg.center_hours).rem_euclid(24.0),
            amplitude: uniform(rng, cfg.amplitude),
            plateau_half: uniform(rng, cfg.plateau_half),
            shoulder_sigma: uniform(rng, cfg.shoulder_sigma),
        })
        .collect();
    let mut day_factors = [1.0; DAYS_PER_WEEK];
    for f in day_factors.iter_mut() {
        *f = 1.0 - rng.gen_range(0.0..=cfg.day_amplitude_jitter.max(f64::MIN_POSITIVE));
    }
    CurveParams {
        bumps,
        base_rate: cfg.base_rate,
        day_factors,
    }
}

/// Generate a deterministic population.
///
/// Secondary channels copy the primary channel's curve parameters with
/// probability `correlation`, which couples their peak structure; activity
/// gates are always drawn independently per channel.
pub fn generate_population(cfg: &PopulationConfig, seed: u64) -> Vec<SyntheticUser> {
    (0..cfg.size)
        .map(|i| {
            let user_seed = StableHasher::new(seed)
                .write_str("user")
                .write_u64(i as u64)
                .finish();
            let mut rng = ChaCha8Rng::seed_from_u64(user_seed);
            let primary_params = draw_curve_params(&mut rng, cfg);
            let mut curves = BTreeMap::new();
            let mut activity = BTreeMap::new();
            for (c, name) in cfg.channels.iter().enumerate() {
                let channel = ChannelId::new(name.clone());
                let params = if c == 0 {
                    primary_params.clone()
                } else {
                    let share: f64 = rng.gen_range(0.0..1.0);
                    // Draw the independent params unconditionally so the RNG
                    // stream does not depend on the correlation branch.
                    let independent = draw_curve_params(&mut rng, cfg);
                    if share < cfg.correlation {
                        primary_params.clone()
                    } else {
                        independent
                    }
                };
                curves.insert(channel.clone(), build_curve(&params));
                let gate_roll: f64 = rng.gen_range(0.0..1.0);
                let gate = uniform(&mut rng, cfg.activity);
                activity.insert(
                    channel,
                    if gate_roll < cfg.inactive_probability {
                        0.0
                    } else {
                        gate
                    },
                );
            }
            let utc_offset_minutes = if cfg.utc_offsets_minutes.is_empty() {
                0
            } else {
                cfg.utc_offsets_minutes[rng.gen_range(0..cfg.utc_offsets_minutes.len())]
            };
            SyntheticUser {
                id: UserId::new(format!("user-{i}")),
                utc_offset_minutes,
                curves,
                activity,
                noise_scale: cfg.noise_scale,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bump_cfg() -> PopulationConfig {
        PopulationConfig {
            size: 1,
            bumps: [1, 1],
            center_hours: [20.0, 20.0],
            amplitude: [0.6, 0.6],
            plateau_half: [0.0, 0.0],
            shoulder_sigma: [2.0, 2.0],
            ..PopulationConfig::default()
        }
    }

    #[test]
    fn single_bump_argmax_at_center_every_day() {
        let users = generate_population(&single_bump_cfg(), 1);
        let curve = &users[0].curves[&ChannelId::from("a")];
        for d in 0..DAYS_PER_WEEK {
            let day = &curve[d * 24..(d + 1) * 24];
            let argmax = day
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 20, "day {d}");
        }
    }

    #[test]
    fn perfect_correlation_copies_curves() {
        let cfg = PopulationConfig {
            size: 20,
            channels: vec!["a".into(), "b".into()],
            correlation: 1.0,
            ..PopulationConfig::default()
        };
        for user in generate_population(&cfg, 3) {
            assert_eq!(
                user.curves[&ChannelId::from("a")],
                user.curves[&ChannelId::from("b")]
            );
        }
    }

    #[test]
    fn zero_correlation_decouples_argmax_hours() {
        let cfg = PopulationConfig {
            size: 10_000,
            channels: vec!["a".into(), "b".into()],
            correlation: 0.0,
            bumps: [1, 1],
            plateau_half: [0.0, 0.0],
            ..PopulationConfig::default()
        };
        let users = generate_population(&cfg, 7);
        let argmax_hour = |user: &SyntheticUser, ch: &str| -> f64 {
            let curve = &user.curves[&ChannelId::from(ch)];
            curve[..24]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0 as f64
        };
        let xs: Vec<f64> = users.iter().map(|u| argmax_hour(u, "a")).collect();
        let ys: Vec<f64> = users.iter().map(|u| argmax_hour(u, "b")).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 0.1, "argmax correlation {corr}");
    }

    #[test]
    fn population_replays_from_seed() {
        let cfg = PopulationConfig {
            size: 50,
            channels: vec!["a".into(), "b".into()],
            correlation: 0.5,
            ..PopulationConfig::default()
        };
        assert_eq!(generate_population(&cfg, 9), generate_population(&cfg, 9));
        assert_ne!(generate_population(&cfg, 9), generate_population(&cfg, 10));
    }

    #[test]
    fn probabilities_stay_in_range() {
        let cfg = PopulationConfig {
            size: 100,
            bumps: [2, 3],
            amplitude: [0.5, 0.9],
            ..PopulationConfig::default()
        };
        for user in generate_population(&cfg, 11) {
            for curve in user.curves.values() {
                assert!(curve.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn plateau_is_flat_at_center() {
        let bump = Bump {
            center_hour: 12.0,
            amplitude: 0.5,
            plateau_half: 4.0,
            shoulder_sigma: 1.5,
        };
        for h in 8..=16 {
            assert_eq!(bump.value(h as f64), 0.5, "hour {h}");
        }
        assert!(bump.value(17.0) < 0.5);
        // Wraps on the circle.
        assert!(bump.value(0.0) < bump.value(8.0));
    }

    #[test]
    fn engagement_prob_respects_utc_offset() {
        let mut users = generate_population(&single_bump_cfg(), 2);
        let user = &mut users[0];
        user.utc_offset_minutes = 120;
        // Server slot at local hour 20 means server hour 18.
        let slot = TimeSlot {
            index: 18,
            start: 18 * 3600,
            length: 3600,
        };
        let ch = ChannelId::from("a");
        let peak = user.engagement_prob(&ch, &slot);
        let off_peak = user.engagement_prob(
            &ch,
            &TimeSlot {
                index: 20,
                start: 20 * 3600,
                length: 3600,
            },
        );
        assert!(peak > off_peak);
    }
}
