//! Per-slot raw score production.
//!
//! Three signal families feed the ranking pipeline: weekly activity counters
//! (real-time ingestion path), synthetic predictors standing in for learned
//! click/activity models, and the local-time / windowed-activity feature
//! extraction used by ground-truth generators and cohort analysis.
//!
//! Counters are keyed `(day-of-week, hour)`, 168 buckets per channel, which
//! matches hour-length slots and weekly aggregation. Ingestion for distinct
//! users needs no coordination (counters are independent values); per-user
//! updates follow a single-writer contract and reads operate on snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{unit_from_hash, StableHasher};
use crate::temporal::{
    day_of_week, epoch_day, hour_of_day, ChannelId, MetricId, RawScore, TimeSlot, UserId,
    DAYS_PER_WEEK, HOURS_PER_DAY, SECONDS_PER_HOUR,
};

/// Largest supported user timezone offset (UTC±14h), in minutes.
pub const MAX_UTC_OFFSET_MINUTES: i32 = 14 * 60;

/// Weekly activity counter for one (user, channel): counts per (day-of-week 0-6, hour 0-23).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityCounter {
    pub user: UserId,
    pub channel: ChannelId,
    buckets: [[u64; HOURS_PER_DAY]; DAYS_PER_WEEK],
}

impl ActivityCounter {
    pub fn new(user: UserId, channel: ChannelId) -> Self {
        ActivityCounter {
            user,
            channel,
            buckets: [[0; HOURS_PER_DAY]; DAYS_PER_WEEK],
        }
    }

    pub fn get(&self, day_of_week: u8, hour: u8) -> u64 {
        self.buckets[day_of_week as usize % DAYS_PER_WEEK][hour as usize % HOURS_PER_DAY]
    }

    pub fn set(&mut self, day_of_week: u8, hour: u8, count: u64) {
        self.buckets[day_of_week as usize % DAYS_PER_WEEK][hour as usize % HOURS_PER_DAY] = count;
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().flatten().sum()
    }

    /// Bucket-wise sum of two counters for the same (user, channel).
    pub fn merge(&mut self, other: &ActivityCounter) {
        for d in 0..DAYS_PER_WEEK {
            for h in 0..HOURS_PER_DAY {
                self.buckets[d][h] = self.buckets[d][h].saturating_add(other.buckets[d][h]);
            }
        }
    }

    /// Multiplicative decay of every bucket (applied e.g. weekly); off by default
    /// in all pipelines. Counts round toward zero.
    pub fn decay(&mut self, factor: f64) {
        let factor = factor.clamp(0.0, 1.0);
        for row in &mut self.buckets {
            for b in row.iter_mut() {
                *b = (*b as f64 * factor) as u64;
            }
        }
    }
}

/// Record one activity event into its weekly bucket.
///
/// `event_time` is the timestamp as observed on the user side; the offset maps
/// it back to server time (`server = event_time - offset`), so an offset of 0
/// means the event is already server-clocked. Buckets saturate instead of
/// overflowing.
pub fn record_activity(
    counter: &mut ActivityCounter,
    event_time: i64,
    user_utc_offset_minutes: i32,
) {
    let server_time = event_time - i64::from(user_utc_offset_minutes) * 60;
    let d = day_of_week(server_time) as usize;
    let h = hour_of_day(server_time) as usize;
    counter.buckets[d][h] = counter.buckets[d][h].saturating_add(1);
}

/// Raw per-slot scores from a counter, for one day of the week.
///
/// Each slot scores the bucket at its starting hour; slots longer than one
/// hour sum every hourly bucket they cover (wrapping at midnight).
pub fn counter_signal(
    counter: &ActivityCounter,
    slots: &[TimeSlot],
    day_of_week: u8,
) -> BTreeMap<usize, RawScore> {
    let d = day_of_week as usize % DAYS_PER_WEEK;
    slots
        .iter()
        .map(|slot| {
            let first_hour = i64::from(slot.hour_of_day());
            let hours_covered =
                ((slot.length + SECONDS_PER_HOUR - 1) / SECONDS_PER_HOUR).max(1);
            let sum: u64 = (0..hours_covered)
                .map(|k| {
                    let h = ((first_hour + k).rem_euclid(HOURS_PER_DAY as i64)) as usize;
                    counter.buckets[d][h]
                })
                .sum();
            (slot.index, RawScore::new(sum as f64).expect("counts are finite"))
        })
        .collect()
}

/// How active a user is on a channel, in `[0, 1]`; gates that channel's
/// signal during assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelActivityLevel {
    pub user: UserId,
    pub channel: ChannelId,
    pub level: f64,
}

impl ChannelActivityLevel {
    pub fn new(user: UserId, channel: ChannelId, level: f64) -> Result<Self> {
        if !level.is_finite() || !(0.0..=1.0).contains(&level) {
            return Err(Error::InvalidArgument(format!(
                "channel activity level must lie in [0, 1], got {level}"
            )));
        }
        Ok(ChannelActivityLevel {
            user,
            channel,
            level,
        })
    }
}

/// Activity level as (distinct active days in the trailing 28) / 28.
pub fn channel_activity_level(
    user: UserId,
    channel: ChannelId,
    event_times: &[i64],
    as_of: i64,
) -> ChannelActivityLevel {
    let today = epoch_day(as_of);
    let active_days: BTreeSet<i64> = event_times
        .iter()
        .map(|&t| epoch_day(t))
        .filter(|&d| d > today - 28 && d <= today)
        .collect();
    ChannelActivityLevel {
        user,
        channel,
        level: active_days.len() as f64 / 28.0,
    }
}

/// A server-site slot translated into the user's local clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalTimeFeatures {
    pub day_of_week: u8,
    pub hour_of_day: u8,
    pub is_holiday: bool,
    pub utc_offset_minutes: i32,
}

/// Translate a slot's start into local day/hour given a fixed UTC offset.
///
/// `holidays` holds local epoch-day numbers (see [`epoch_day`]).
pub fn local_time_features(
    slot: &TimeSlot,
    user_utc_offset_minutes: i32,
    holidays: &BTreeSet<i64>,
) -> Result<LocalTimeFeatures> {
    if user_utc_offset_minutes.abs() > MAX_UTC_OFFSET_MINUTES {
        return Err(Error::InvalidArgument(format!(
            "utc offset {user_utc_offset_minutes}min outside [-14h, +14h]"
        )));
    }
    let local = slot.start + i64::from(user_utc_offset_minutes) * 60;
    Ok(LocalTimeFeatures {
        day_of_week: day_of_week(local),
        hour_of_day: hour_of_day(local),
        is_holiday: holidays.contains(&epoch_day(local)),
        utc_offset_minutes: user_utc_offset_minutes,
    })
}

/// An hour range relative to a slot, inclusive of both endpoints.
///
/// The inclusive convention is fixed here once: a window of `[-4, 0]` covers
/// five hourly buckets ending at the slot's own hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HourWindow {
    pub from_hours: i32,
    pub to_hours: i32,
}

impl HourWindow {
    pub fn new(from_hours: i32, to_hours: i32) -> Result<Self> {
        if from_hours > to_hours {
            return Err(Error::InvalidArgument(format!(
                "hour window [{from_hours}, {to_hours}] is not well-ordered"
            )));
        }
        Ok(HourWindow {
            from_hours,
            to_hours,
        })
    }
}

/// Windowed activity aggregates around one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedActivityFeatures {
    pub user: UserId,
    pub slot: TimeSlot,
    pub window_sums: Vec<(HourWindow, f64)>,
    /// Per-hour sum across all 7 day-of-week buckets.
    pub weekly_aggregate: [f64; HOURS_PER_DAY],
}

/// Sum hourly buckets over each window relative to the slot's hour, stepping
/// through adjacent day-of-week buckets when a window wraps past midnight.
pub fn windowed_activity_features(
    counter: &ActivityCounter,
    slot: &TimeSlot,
    windows: &[HourWindow],
) -> Result<WindowedActivityFeatures> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one tracking window is required".into(),
        ));
    }
    let base_day = i64::from(slot.day_of_week());
    let base_hour = i64::from(slot.hour_of_day());
    let window_sums = windows
        .iter()
        .map(|&w| {
            let sum: u64 = (w.from_hours..=w.to_hours)
                .map(|offset| {
                    let abs_hour = base_hour + i64::from(offset);
                    let h = abs_hour.rem_euclid(HOURS_PER_DAY as i64) as usize;
                    let day_shift = abs_hour.div_euclid(HOURS_PER_DAY as i64);
                    let d = (base_day + day_shift).rem_euclid(DAYS_PER_WEEK as i64) as usize;
                    counter.buckets[d][h]
                })
                .sum();
            (w, sum as f64)
        })
        .collect();
    let mut weekly_aggregate = [0.0; HOURS_PER_DAY];
    for (h, agg) in weekly_aggregate.iter_mut().enumerate() {
        *agg = (0..DAYS_PER_WEEK).map(|d| counter.buckets[d][h]).sum::<u64>() as f64;
    }
    Ok(WindowedActivityFeatures {
        user: counter.user.clone(),
        slot: *slot,
        window_sums,
        weekly_aggregate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Counter,
    Predictor,
}

/// Shape of a synthetic predictor curve over the 24-hour local day.
///
/// These stand in for learned per-channel models: deterministic, cheap, and
/// parameterized enough to express the activity patterns the simulator needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PredictorParams {
    /// Same score on every slot.
    Constant { value: f64 },
    /// Single circular bump centered on `peak_hour`.
    Unimodal {
        peak_hour: f64,
        amplitude: f64,
        width: f64,
    },
    /// Sum of two circular bumps with a shared width.
    Bimodal {
        peak_a: f64,
        peak_b: f64,
        amplitude: f64,
        width: f64,
    },
}

/// One configured signal source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalProvider {
    pub metric: MetricId,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PredictorParams>,
}

/// Circular hour distance on the 24-hour cycle.
fn circular_hour_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

fn bump(hour: f64, peak: f64, amplitude: f64, width: f64) -> f64 {
    let d = circular_hour_distance(hour, peak);
    let w = width.max(1e-6);
    amplitude * (-d * d / (2.0 * w * w)).exp()
}

/// Evaluate a synthetic predictor over a slot set.
///
/// The output is a pure function of (parameters, user id hash, slot local
/// hour): repeat calls are byte-identical. The user hash scales the whole
/// curve into `[0.5, 1.0]` of its configured amplitude, which personalizes
/// magnitudes without moving any argmax.
pub fn synthetic_predictor_signal(
    provider: &SignalProvider,
    user: &UserId,
    slots: &[TimeSlot],
    user_utc_offset_minutes: i32,
) -> Result<BTreeMap<usize, RawScore>> {
    if provider.kind != ProviderKind::Predictor {
        return Err(Error::Configuration(format!(
            "provider for {} is not a predictor",
            provider.metric
        )));
    }
    let params = provider.params.as_ref().ok_or_else(|| {
        Error::Configuration(format!(
            "predictor for {} is missing its parameters",
            provider.metric
        ))
    })?;
    let user_scale = 0.5
        + 0.5
            * unit_from_hash(
                StableHasher::new(0x5349_474e) // "SIGN"
                    .write_str(user.as_str())
                    .write_str(provider.metric.as_str())
                    .finish(),
            );
    slots
        .iter()
        .map(|slot| {
            let local =
                slot.start + i64::from(user_utc_offset_minutes) * 60;
            let local_hour = local.rem_euclid(crate::temporal::SECONDS_PER_DAY) as f64 / 3600.0;
            let value = match params {
                PredictorParams::Constant { value } => *value,
                PredictorParams::Unimodal {
                    peak_hour,
                    amplitude,
                    width,
                } => bump(local_hour, *peak_hour, *amplitude, *width),
                PredictorParams::Bimodal {
                    peak_a,
                    peak_b,
                    amplitude,
                    width,
                } => {
                    bump(local_hour, *peak_a, *amplitude, *width)
                        + bump(local_hour, *peak_b, *amplitude, *width)
                }
            };
            Ok((slot.index, RawScore::new(user_scale * value)?))
        })
        .collect()
}

/// CSV row shape: `user,channel,dow,hour,count`.
#[derive(Debug, Serialize, Deserialize)]
struct CounterCsvRow {
    user: String,
    channel: String,
    dow: u8,
    hour: u8,
    count: u64,
}

/// Write counter snapshots as `user,channel,dow,hour,count` rows, omitting
/// empty buckets.
pub fn write_counters_csv<W: Write>(writer: W, counters: &[ActivityCounter]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in counters {
        for d in 0..DAYS_PER_WEEK {
            for h in 0..HOURS_PER_DAY {
                let count = c.buckets[d][h];
                if count > 0 {
                    w.serialize(CounterCsvRow {
                        user: c.user.0.clone(),
                        channel: c.channel.0.clone(),
                        dow: d as u8,
                        hour: h as u8,
                        count,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read counter snapshots from `user,channel,dow,hour,count` rows.
pub fn read_counters_csv<R: Read>(reader: R) -> Result<Vec<ActivityCounter>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut grouped: BTreeMap<(UserId, ChannelId), ActivityCounter> = BTreeMap::new();
    for row in r.deserialize() {
        let row: CounterCsvRow = row?;
        if row.dow as usize >= DAYS_PER_WEEK || row.hour as usize >= HOURS_PER_DAY {
            return Err(Error::Parse(format!(
                "bucket key ({}, {}) out of range",
                row.dow, row.hour
            )));
        }
        let key = (UserId(row.user.clone()), MetricId(row.channel.clone()));
        let key = (key.0, ChannelId(key.1 .0));
        let counter = grouped
            .entry(key.clone())
            .or_insert_with(|| ActivityCounter::new(key.0.clone(), key.1.clone()));
        counter.set(row.dow, row.hour, row.count);
    }
    Ok(grouped.into_values().collect())
}

/// CSV row shape for raw activity events: `user,channel,event_time,utc_offset`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub user: String,
    pub channel: String,
    pub event_time: i64,
    /// User UTC offset in minutes at event time.
    pub utc_offset: i32,
}

/// Fold an event stream into per-(user, channel) counters.
pub fn ingest_events_csv<R: Read>(reader: R) -> Result<Vec<ActivityCounter>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut grouped: BTreeMap<(UserId, ChannelId), ActivityCounter> = BTreeMap::new();
    for row in r.deserialize() {
        let ev: ActivityEvent = row?;
        let key = (UserId(ev.user), ChannelId(ev.channel));
        let counter = grouped
            .entry(key.clone())
            .or_insert_with(|| ActivityCounter::new(key.0.clone(), key.1.clone()));
        record_activity(counter, ev.event_time, ev.utc_offset);
    }
    Ok(grouped.into_values().collect())
}
