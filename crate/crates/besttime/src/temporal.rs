//! Foundational time, slot, and score types.
//!
//! Execution ranges are partitioned into contiguous fixed-length slots, and
//! raw per-slot metric values are normalized into `[0, 1]` activity maps that
//! every downstream ranking policy consumes. Timestamps are integer seconds
//! in the server-site timezone throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;
pub const HOURS_PER_DAY: usize = 24;
pub const DAYS_PER_WEEK: usize = 7;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// Opaque user identifier.
    UserId
);
string_id!(
    /// Identifies one prediction metric (a utility function's output stream).
    MetricId
);
string_id!(
    /// Identifies a product use case (one tenant of the optimizer).
    UseCaseId
);
string_id!(
    /// Identifies a delivery or activity channel (push, in-app, email, ...).
    ChannelId
);

/// Day-of-week index with Sunday = 0 through Saturday = 6.
///
/// The Unix epoch (1970-01-01) was a Thursday, i.e. day 4 in this numbering.
/// `div_euclid`/`rem_euclid` keep pre-epoch timestamps well-defined.
pub fn day_of_week(ts: i64) -> u8 {
    ((ts.div_euclid(SECONDS_PER_DAY) + 4).rem_euclid(7)) as u8
}

/// Hour of day (0-23) of a timestamp.
pub fn hour_of_day(ts: i64) -> u8 {
    (ts.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as u8
}

/// Whole days since the Unix epoch (floor).
pub fn epoch_day(ts: i64) -> i64 {
    ts.div_euclid(SECONDS_PER_DAY)
}

/// One candidate execution slot within a scheduling request's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlot {
    /// Ordinal within the candidate set the slot was partitioned into.
    pub index: usize,
    /// Start timestamp, seconds, server-site timezone.
    pub start: i64,
    /// Slot length in seconds; identical for all slots of one candidate set.
    pub length: i64,
}

impl TimeSlot {
    /// Exclusive end timestamp.
    pub fn end(&self) -> i64 {
        self.start + self.length
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end()
    }

    pub fn day_of_week(&self) -> u8 {
        day_of_week(self.start)
    }

    pub fn hour_of_day(&self) -> u8 {
        hour_of_day(self.start)
    }
}

/// Partition `[t_start, t_end)` into contiguous slots of length `slot_length`.
///
/// Returns exactly `floor((t_end - t_start) / slot_length)` slots; a trailing
/// remainder shorter than one slot is dropped so every slot has the same
/// length (variable tail slots would distort jitter uniformity).
pub fn partition_range(t_start: i64, t_end: i64, slot_length: i64) -> Result<Vec<TimeSlot>> {
    if t_end <= t_start {
        return Err(Error::InvalidArgument(format!(
            "execution range is empty or negative: [{t_start}, {t_end})"
        )));
    }
    if slot_length <= 0 {
        return Err(Error::InvalidArgument(format!(
            "slot length must be positive, got {slot_length}"
        )));
    }
    let k = (t_end - t_start) / slot_length;
    if k == 0 {
        return Err(Error::EmptyCandidates(format!(
            "range of {}s is shorter than one slot of {}s",
            t_end - t_start,
            slot_length
        )));
    }
    Ok((0..k)
        .map(|i| TimeSlot {
            index: i as usize,
            start: t_start + i * slot_length,
            length: slot_length,
        })
        .collect())
}

/// A metric-native score; finite by construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RawScore(f64);

impl RawScore {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "raw score must be finite, got {value}"
            )));
        }
        Ok(RawScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RawScore {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        RawScore::new(v)
    }
}

impl From<RawScore> for f64 {
    fn from(s: RawScore) -> f64 {
        s.0
    }
}

/// A score normalized into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NormalizedScore(f64);

impl NormalizedScore {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "normalized score must lie in [0, 1], got {value}"
            )));
        }
        Ok(NormalizedScore(value))
    }

    /// Clamp an arbitrary finite value into range.
    pub fn clamped(value: f64) -> Self {
        NormalizedScore(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NormalizedScore {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        NormalizedScore::new(v)
    }
}

impl From<NormalizedScore> for f64 {
    fn from(s: NormalizedScore) -> f64 {
        s.0
    }
}

/// Global min/max of one metric, used as the normalization denominator.
///
/// Bounds are computed over whatever window of historical data the caller
/// supplies; `provenance` records that choice so stale bounds are auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    pub metric: MetricId,
    pub min: RawScore,
    pub max: RawScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl MetricBounds {
    pub fn new(metric: MetricId, min: f64, max: f64) -> Result<Self> {
        let min = RawScore::new(min)?;
        let max = RawScore::new(max)?;
        if max.value() < min.value() {
            return Err(Error::InvalidArgument(format!(
                "bounds for {metric} are inverted: max {} < min {}",
                max.value(),
                min.value()
            )));
        }
        Ok(MetricBounds {
            metric,
            min,
            max,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    /// Compute bounds from observed scores.
    pub fn from_scores<I: IntoIterator<Item = f64>>(metric: MetricId, scores: I) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for s in scores {
            if !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score while computing bounds for {metric}"
                )));
            }
            min = min.min(s);
            max = max.max(s);
            any = true;
        }
        if !any {
            return Err(Error::EmptyCandidates(format!(
                "no scores supplied for bounds of {metric}"
            )));
        }
        MetricBounds::new(metric, min, max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.max.value() == self.min.value()
    }
}

/// Min-max normalize a raw score into `[0, 1]`.
///
/// Values outside the bounds clamp rather than error: bounds come from
/// historical data and may be stale relative to fresh counters. Degenerate
/// bounds (`max == min`) map everything to 0.5, so downstream ties resolve
/// through the policy's deterministic tie-break instead of NaN propagation.
pub fn normalize(raw: RawScore, bounds: &MetricBounds) -> NormalizedScore {
    if bounds.is_degenerate() {
        return NormalizedScore(0.5);
    }
    let span = bounds.max.value() - bounds.min.value();
    NormalizedScore::clamped((raw.value() - bounds.min.value()) / span)
}

/// Per-(user, metric) map from slot index to normalized activity score.
///
/// Immutable once built; policies that remove slots work on copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivityMapDoc", into = "ActivityMapDoc")]
pub struct TemporalActivityMap {
    user: UserId,
    metric: MetricId,
    entries: BTreeMap<usize, NormalizedScore>,
}

impl TemporalActivityMap {
    pub fn new(
        user: UserId,
        metric: MetricId,
        entries: BTreeMap<usize, NormalizedScore>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCandidates(format!(
                "activity map for ({user}, {metric}) has no entries"
            )));
        }
        Ok(TemporalActivityMap {
            user,
            metric,
            entries,
        })
    }

    /// Map where every listed slot scores 0.5; the missing-signal fallback.
    pub fn uniform(user: UserId, metric: MetricId, slots: &[usize]) -> Result<Self> {
        TemporalActivityMap::new(
            user,
            metric,
            slots.iter().map(|&s| (s, NormalizedScore(0.5))).collect(),
        )
    }

    pub fn user(&self) -> &UserId {
        &self.user
    }

    pub fn metric(&self) -> &MetricId {
        &self.metric
    }

    pub fn get(&self, slot: usize) -> Option<NormalizedScore> {
        self.entries.get(&slot).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending slot order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, NormalizedScore)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn slot_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// Highest slot index present.
    pub fn max_slot(&self) -> usize {
        *self.entries.keys().next_back().expect("map is non-empty")
    }
}

/// Build a map by normalizing raw per-slot scores against metric bounds.
///
/// Slots absent from `raw_scores` stay absent; they are not zero-filled.
pub fn build_activity_map(
    user: UserId,
    metric: MetricId,
    raw_scores: &BTreeMap<usize, RawScore>,
    bounds: &MetricBounds,
) -> Result<TemporalActivityMap> {
    if raw_scores.is_empty() {
        return Err(Error::EmptyCandidates(format!(
            "no raw scores supplied for ({user}, {metric})"
        )));
    }
    let entries = raw_scores
        .iter()
        .map(|(&slot, &raw)| (slot, normalize(raw, bounds)))
        .collect();
    TemporalActivityMap::new(user, metric, entries)
}

/// JSON document form of an activity map.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivityMapDoc {
    user: UserId,
    metric: MetricId,
    entries: Vec<ActivityMapEntryDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivityMapEntryDoc {
    slot: usize,
    score: f64,
}

impl From<TemporalActivityMap> for ActivityMapDoc {
    fn from(map: TemporalActivityMap) -> Self {
        ActivityMapDoc {
            user: map.user,
            metric: map.metric,
            entries: map
                .entries
                .into_iter()
                .map(|(slot, score)| ActivityMapEntryDoc {
                    slot,
                    score: score.value(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ActivityMapDoc> for TemporalActivityMap {
    type Error = Error;

    fn try_from(doc: ActivityMapDoc) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            let score = NormalizedScore::new(e.score)?;
            if entries.insert(e.slot, score).is_some() {
                return Err(Error::Parse(format!(
                    "duplicate slot {} in map for ({}, {})",
                    e.slot, doc.user, doc.metric
                )));
            }
        }
        TemporalActivityMap::new(doc.user, doc.metric, entries)
    }
}

/// CSV row shape: `user,metric,slot_index,score`.
#[derive(Debug, Serialize, Deserialize)]
struct MapCsvRow {
    user: String,
    metric: String,
    slot_index: usize,
    score: f64,
}

/// Write maps as `user,metric,slot_index,score` CSV rows (with header).
pub fn write_maps_csv<W: Write>(writer: W, maps: &[TemporalActivityMap]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for map in maps {
        for (slot, score) in map.iter() {
            w.serialize(MapCsvRow {
                user: map.user().0.clone(),
                metric: map.metric().0.clone(),
                slot_index: slot,
                score: score.value(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read maps from `user,metric,slot_index,score` CSV rows. Rows may arrive in
/// any order; they are grouped by (user, metric).
pub fn read_maps_csv<R: Read>(reader: R) -> Result<Vec<TemporalActivityMap>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut grouped: BTreeMap<(UserId, MetricId), BTreeMap<usize, NormalizedScore>> =
        BTreeMap::new();
    for row in r.deserialize() {
        let row: MapCsvRow = row?;
        let score = NormalizedScore::new(row.score)?;
        let key = (UserId(row.user), MetricId(row.metric));
        if grouped
            .entry(key.clone())
            .or_default()
            .insert(row.slot_index, score)
            .is_some()
        {
            return Err(Error::Parse(format!(
                "duplicate slot {} for ({}, {})",
                row.slot_index, key.0, key.1
            )));
        }
    }
    grouped
        .into_iter()
        .map(|((user, metric), entries)| TemporalActivityMap::new(user, metric, entries))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(min: f64, max: f64) -> MetricBounds {
        MetricBounds::new(MetricId::from("m"), min, max).unwrap()
    }

    #[test]
    fn partition_one_day_in_hours() {
        let slots = partition_range(0, 86_400, 3600).unwrap();
        assert_eq!(slots.len(), 24);
        for (i, slot) in slots.iter().enumerate() {
            assert_eq!(slot.index, i);
            assert_eq!(slot.start, i as i64 * 3600);
            assert_eq!(slot.length, 3600);
        }
    }

    #[test]
    fn partition_single_slot() {
        let slots = partition_range(0, 3600, 3600).unwrap();
        assert_eq!(slots.len(), 1);
        assert_eq!(slots[0].start, 0);
    }

    #[test]
    fn partition_exact_multiple_keeps_all_slots() {
        // floor(90000 / 3600) = 25, nothing dropped.
        let slots = partition_range(0, 90_000, 3600).unwrap();
        assert_eq!(slots.len(), 25);
        assert_eq!(slots.last().unwrap().end(), 90_000);
    }

    #[test]
    fn partition_drops_short_remainder() {
        let slots = partition_range(0, 5000, 3600).unwrap();
        assert_eq!(slots.len(), 1);
        assert_eq!(slots[0].end(), 3600);
    }

    #[test]
    fn partition_rejects_bad_ranges() {
        assert!(matches!(
            partition_range(10, 10, 3600),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            partition_range(10, 5, 3600),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            partition_range(0, 100, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            partition_range(0, 100, 3600),
            Err(Error::EmptyCandidates(_))
        ));
    }

    #[test]
    fn partition_tiles_without_gaps() {
        let slots = partition_range(1000, 1000 + 7 * 900, 900).unwrap();
        let total: i64 = slots.iter().map(|s| s.length).sum();
        assert_eq!(total, 7 * 900);
        for pair in slots.windows(2) {
            assert_eq!(pair[0].end(), pair[1].start);
        }
    }

    #[test]
    fn normalize_endpoints() {
        let b = bounds(1.0, 5.0);
        assert_eq!(normalize(RawScore::new(1.0).unwrap(), &b).value(), 0.0);
        assert_eq!(normalize(RawScore::new(5.0).unwrap(), &b).value(), 1.0);
    }

    #[test]
    fn normalize_midpoint_by_hand() {
        // (3 - 1) / (5 - 1) = 0.5
        let b = bounds(1.0, 5.0);
        assert_eq!(normalize(RawScore::new(3.0).unwrap(), &b).value(), 0.5);
    }

    #[test]
    fn normalize_clamps_out_of_bounds() {
        let b = bounds(1.0, 5.0);
        assert_eq!(normalize(RawScore::new(-10.0).unwrap(), &b).value(), 0.0);
        assert_eq!(normalize(RawScore::new(99.0).unwrap(), &b).value(), 1.0);
    }

    #[test]
    fn normalize_degenerate_bounds_is_half() {
        let b = bounds(2.0, 2.0);
        assert_eq!(normalize(RawScore::new(2.0).unwrap(), &b).value(), 0.5);
        assert_eq!(normalize(RawScore::new(-7.0).unwrap(), &b).value(), 0.5);
    }

    #[test]
    fn raw_score_rejects_non_finite() {
        assert!(RawScore::new(f64::NAN).is_err());
        assert!(RawScore::new(f64::INFINITY).is_err());
    }

    #[test]
    fn bounds_reject_inversion() {
        assert!(MetricBounds::new(MetricId::from("m"), 5.0, 1.0).is_err());
    }

    #[test]
    fn build_map_endpoints() {
        let raws: BTreeMap<usize, RawScore> = [
            (0, RawScore::new(1.0).unwrap()),
            (1, RawScore::new(5.0).unwrap()),
        ]
        .into_iter()
        .collect();
        let map = build_activity_map(
            UserId::from("u"),
            MetricId::from("m"),
            &raws,
            &bounds(1.0, 5.0),
        )
        .unwrap();
        assert_eq!(map.get(0).unwrap().value(), 0.0);
        assert_eq!(map.get(1).unwrap().value(), 1.0);
        assert_eq!(map.get(2), None);
    }

    #[test]
    fn build_map_single_entry() {
        let raws: BTreeMap<usize, RawScore> = [(0, RawScore::new(3.0).unwrap())].into();
        let map = build_activity_map(
            UserId::from("u"),
            MetricId::from("m"),
            &raws,
            &bounds(1.0, 5.0),
        )
        .unwrap();
        assert_eq!(map.get(0).unwrap().value(), 0.5);
    }

    #[test]
    fn build_map_degenerate_bounds_all_half() {
        let raws: BTreeMap<usize, RawScore> = (0..3)
            .map(|i| (i, RawScore::new(2.0).unwrap()))
            .collect();
        let map = build_activity_map(
            UserId::from("u"),
            MetricId::from("m"),
            &raws,
            &bounds(2.0, 2.0),
        )
        .unwrap();
        for (_, score) in map.iter() {
            assert_eq!(score.value(), 0.5);
        }
    }

    #[test]
    fn build_map_rejects_empty() {
        let raws = BTreeMap::new();
        assert!(matches!(
            build_activity_map(UserId::from("u"), MetricId::from("m"), &raws, &bounds(0.0, 1.0)),
            Err(Error::EmptyCandidates(_))
        ));
    }

    #[test]
    fn day_of_week_epoch_is_thursday() {
        assert_eq!(day_of_week(0), 4);
        // 4 days later: Monday.
        assert_eq!(day_of_week(4 * SECONDS_PER_DAY), 1);
        // Pre-epoch: Wednesday.
        assert_eq!(day_of_week(-1), 3);
    }

    #[test]
    fn hour_decomposition() {
        assert_eq!(hour_of_day(4 * SECONDS_PER_DAY + 9 * 3600 + 1800), 9);
        assert_eq!(hour_of_day(-1800), 23);
    }

    #[test]
    fn map_json_round_trip() {
        let raws: BTreeMap<usize, RawScore> = [
            (3, RawScore::new(0.0).unwrap()),
            (7, RawScore::new(10.0).unwrap()),
        ]
        .into_iter()
        .collect();
        let map = build_activity_map(
            UserId::from("u1"),
            MetricId::from("in_app"),
            &raws,
            &bounds(0.0, 10.0),
        )
        .unwrap();
        let json = serde_json::to_string(&map).unwrap();
        assert!(json.contains("\"entries\""));
        let back: TemporalActivityMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn map_csv_round_trip() {
        let raws: BTreeMap<usize, RawScore> = (0..4)
            .map(|i| (i, RawScore::new(i as f64).unwrap()))
            .collect();
        let m1 = build_activity_map(
            UserId::from("a"),
            MetricId::from("m1"),
            &raws,
            &bounds(0.0, 3.0),
        )
        .unwrap();
        let m2 = build_activity_map(
            UserId::from("b"),
            MetricId::from("m2"),
            &raws,
            &bounds(0.0, 3.0),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_maps_csv(&mut buf, &[m1.clone(), m2.clone()]).unwrap();
        let back = read_maps_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![m1, m2]);
    }

    #[test]
    fn map_json_rejects_out_of_range_score() {
        let json = r#"{"user":"u","metric":"m","entries":[{"slot":0,"score":1.5}]}"#;
        assert!(serde_json::from_str::<TemporalActivityMap>(json).is_err());
    }
}
