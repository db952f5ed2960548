//! Day-of-week keyed signal store.
//!
//! Seven partitions, one per day of the week, each mapping `(user, metric)`
//! to a published activity map. Readers take an `Arc` snapshot of a
//! partition, so every read observes exactly one published version (never a
//! torn mix) while a publish swaps in the next version. Each partition is
//! file-backed (`day_<d>.json`) with a write-to-temp-then-rename publish, so
//! a crashed publish leaves the previous version intact on disk too.
//!
//! Concurrency: any number of readers per partition, one publisher at a time
//! (publishes serialize on the partition lock).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{MetricId, TemporalActivityMap, UserId, DAYS_PER_WEEK};

/// Environment variable overriding the store directory.
pub const STORE_ENV_VAR: &str = "BESTTIME_STORE";

/// One published version of a day partition.
#[derive(Debug, Default)]
pub struct Partition {
    pub version: u64,
    maps: BTreeMap<(UserId, MetricId), TemporalActivityMap>,
}

impl Partition {
    pub fn get(&self, user: &UserId, metric: &MetricId) -> Option<&TemporalActivityMap> {
        self.maps.get(&(user.clone(), metric.clone()))
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TemporalActivityMap> {
        self.maps.values()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    day: usize,
    version: u64,
    maps: Vec<TemporalActivityMap>,
}

/// Store handle; cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct SignalStore {
    dir: PathBuf,
    partitions: Vec<RwLock<Arc<Partition>>>,
    version_counter: AtomicU64,
}

impl SignalStore {
    /// Open (and load) a store rooted at `dir`, creating the directory if
    /// missing.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut partitions = Vec::with_capacity(DAYS_PER_WEEK);
        let mut max_version = 0u64;
        for day in 0..DAYS_PER_WEEK {
            let path = Self::partition_path(&dir, day);
            let partition = if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                let file: PartitionFile = serde_json::from_str(&text)?;
                if file.day != day {
                    return Err(Error::Parse(format!(
                        "partition file {} claims day {}",
                        path.display(),
                        file.day
                    )));
                }
                max_version = max_version.max(file.version);
                Arc::new(Partition {
                    version: file.version,
                    maps: index_batch(file.maps)?,
                })
            } else {
                Arc::new(Partition::default())
            };
            partitions.push(RwLock::new(partition));
        }
        Ok(SignalStore {
            dir,
            partitions,
            version_counter: AtomicU64::new(max_version),
        })
    }

    /// Resolve the store directory: explicit flag, else `BESTTIME_STORE`,
    /// else the configured default.
    pub fn resolve_dir(flag: Option<PathBuf>, config_default: Option<PathBuf>) -> Result<PathBuf> {
        if let Some(dir) = flag {
            return Ok(dir);
        }
        if let Ok(env_dir) = std::env::var(STORE_ENV_VAR) {
            if !env_dir.is_empty() {
                return Ok(PathBuf::from(env_dir));
            }
        }
        config_default.ok_or_else(|| {
            Error::Configuration(format!(
                "no store directory: pass --store, set {STORE_ENV_VAR}, or configure store.path"
            ))
        })
    }

    fn partition_path(dir: &Path, day: usize) -> PathBuf {
        dir.join(format!("day_{day}.json"))
    }

    fn check_day(day: usize) -> Result<()> {
        if day >= DAYS_PER_WEEK {
            return Err(Error::InvalidArgument(format!(
                "day {day} out of range 0-6"
            )));
        }
        Ok(())
    }

    /// Replace a day partition with a new batch, atomically.
    ///
    /// The whole batch is validated and written to disk before the in-memory
    /// swap; a rejected or failed publish leaves the previous version fully
    /// readable. Returns the new version number.
    pub fn publish_maps(&self, day: usize, maps: Vec<TemporalActivityMap>) -> Result<u64> {
        Self::check_day(day)?;
        let indexed = index_batch(maps)?;
        let version = self.version_counter.fetch_add(1, Ordering::SeqCst) + 1;
        let partition = Arc::new(Partition {
            version,
            maps: indexed,
        });

        let file = PartitionFile {
            day,
            version,
            maps: partition.iter().cloned().collect(),
        };
        let path = Self::partition_path(&self.dir, day);
        let tmp = path.with_extension(format!("tmp.{version}"));
        std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
        std::fs::rename(&tmp, &path)?;

        *self
            .partitions[day]
            .write()
            .expect("store lock poisoned") = partition;
        Ok(version)
    }

    /// Snapshot of one day partition: a consistent view of exactly one
    /// published version.
    pub fn snapshot(&self, day: usize) -> Result<Arc<Partition>> {
        Self::check_day(day)?;
        Ok(Arc::clone(
            &self.partitions[day].read().expect("store lock poisoned"),
        ))
    }

    /// Convenience single-map read (clones out of the snapshot).
    pub fn get(
        &self,
        day: usize,
        user: &UserId,
        metric: &MetricId,
    ) -> Result<Option<TemporalActivityMap>> {
        Ok(self.snapshot(day)?.get(user, metric).cloned())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn index_batch(
    maps: Vec<TemporalActivityMap>,
) -> Result<BTreeMap<(UserId, MetricId), TemporalActivityMap>> {
    let mut indexed = BTreeMap::new();
    for map in maps {
        let key = (map.user().clone(), map.metric().clone());
        if indexed.insert(key.clone(), map).is_some() {
            return Err(Error::PublishRejected(format!(
                "duplicate map for ({}, {}) in batch",
                key.0, key.1
            )));
        }
    }
    Ok(indexed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::NormalizedScore;
    use std::collections::BTreeMap as Map;

    fn map_with_score(user: &str, metric: &str, score: f64) -> TemporalActivityMap {
        let entries: Map<usize, NormalizedScore> = (0..4)
            .map(|s| (s, NormalizedScore::new(score).unwrap()))
            .collect();
        TemporalActivityMap::new(UserId::from(user), MetricId::from(metric), entries).unwrap()
    }

    #[test]
    fn publish_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = SignalStore::open(dir.path()).unwrap();
        let map = map_with_score("u1", "m1", 0.25);
        let v = store.publish_maps(2, vec![map.clone()]).unwrap();
        assert_eq!(v, 1);
        let read = store
            .get(2, &UserId::from("u1"), &MetricId::from("m1"))
            .unwrap()
            .unwrap();
        assert_eq!(read, map);
        assert_eq!(
            serde_json::to_vec(&read).unwrap(),
            serde_json::to_vec(&map).unwrap()
        );
    }

    #[test]
    fn reload_from_disk_preserves_versions() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = SignalStore::open(dir.path()).unwrap();
            store.publish_maps(0, vec![map_with_score("u", "m", 0.5)]).unwrap();
            store.publish_maps(3, vec![map_with_score("u", "m", 0.75)]).unwrap();
        }
        let store = SignalStore::open(dir.path()).unwrap();
        assert_eq!(store.snapshot(3).unwrap().version, 2);
        // New publishes continue the version sequence.
        assert_eq!(store.publish_maps(1, vec![]).unwrap(), 3);
    }

    #[test]
    fn day_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = SignalStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.publish_maps(7, vec![]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(store.snapshot(7).is_err());
    }

    #[test]
    fn duplicate_batch_rejected_and_previous_intact() {
        let dir = tempfile::tempdir().unwrap();
        let store = SignalStore::open(dir.path()).unwrap();
        store
            .publish_maps(1, vec![map_with_score("u", "m", 0.5)])
            .unwrap();
        let bad = vec![map_with_score("u", "m", 0.1), map_with_score("u", "m", 0.2)];
        assert!(matches!(
            store.publish_maps(1, bad),
            Err(Error::PublishRejected(_))
        ));
        let read = store
            .get(1, &UserId::from("u"), &MetricId::from("m"))
            .unwrap()
            .unwrap();
        assert_eq!(read.get(0).unwrap().value(), 0.5);
    }

    #[test]
    fn publish_replaces_the_whole_partition() {
        let dir = tempfile::tempdir().unwrap();
        let store = SignalStore::open(dir.path()).unwrap();
        store
            .publish_maps(4, vec![map_with_score("old", "m", 0.5)])
            .unwrap();
        store
            .publish_maps(4, vec![map_with_score("new", "m", 0.5)])
            .unwrap();
        assert!(store
            .get(4, &UserId::from("old"), &MetricId::from("m"))
            .unwrap()
            .is_none());
        assert!(store
            .get(4, &UserId::from("new"), &MetricId::from("m"))
            .unwrap()
            .is_some());
    }

    #[test]
    fn concurrent_reads_see_single_versions() {
        use std::sync::atomic::AtomicBool;

        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(SignalStore::open(dir.path()).unwrap());
        // Each published version scores all maps with the same value, so a
        // mixed-version read would show differing scores within one snapshot.
        let score_of = |v: u64| (v % 100) as f64 / 100.0;
        store
            .publish_maps(
                0,
                (0..8)
                    .map(|u| map_with_score(&format!("u{u}"), "m", score_of(1)))
                    .collect(),
            )
            .unwrap();

        let stop = Arc::new(AtomicBool::new(false));
        let mut readers = Vec::new();
        for _ in 0..4 {
            let store = Arc::clone(&store);
            let stop = Arc::clone(&stop);
            readers.push(std::thread::spawn(move || {
                let mut observed = 0usize;
                while !stop.load(Ordering::Relaxed) {
                    let snap = store.snapshot(0).unwrap();
                    let scores: Vec<f64> = snap
                        .iter()
                        .map(|m| m.get(0).unwrap().value())
                        .collect();
                    assert!(
                        scores.windows(2).all(|w| w[0] == w[1]),
                        "torn read: {scores:?} at version {}",
                        snap.version
                    );
                    observed += 1;
                }
                observed
            }));
        }
        for v in 2..=200u64 {
            store
                .publish_maps(
                    0,
                    (0..8)
                        .map(|u| map_with_score(&format!("u{u}"), "m", score_of(v)))
                        .collect(),
                )
                .unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        for r in readers {
            assert!(r.join().unwrap() > 0);
        }
    }
}
