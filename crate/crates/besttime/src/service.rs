//! Batch scheduling endpoint.
//!
//! Requests come in as JSON lines; each yields either an execution plan or a
//! per-request error record on the way out; a malformed or failing request
//! never aborts the batch. Per-metric day maps are fetched from one store
//! snapshot per partition per request, assembled per the use case's spec,
//! then scheduled with the platform tier enforced on the policy's priority.
//!
//! Users missing from the store degrade to a uniform map: selection becomes
//! seeded-random-among-slots rather than a failed delivery, and the plan is
//! flagged for observability. Request seeds derive from the batch seed plus
//! the request's identifying fields, so identical (requests, store version,
//! seed) batches are idempotent.
//!
//! The wire protocol is plain JSON lines over stdin/stdout or a Unix domain
//! socket; an HTTP layer would be optional glue on top, not part of the
//! contract.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembler::{assemble, ActivityLevels};
use crate::config::DeploymentConfig;
use crate::error::{Error, Result};
use crate::policy::{schedule, ExecutionPlan, SchedulingRequest};
use crate::seeding::StableHasher;
use crate::store::{Partition, SignalStore};
use crate::temporal::{
    partition_range, MetricId, NormalizedScore, TemporalActivityMap, UserId,
};

/// Shared state of a running service instance.
pub struct ServiceState {
    pub config: DeploymentConfig,
    pub store: SignalStore,
    /// Per (user, metric) channel-activity gates; absent entries gate at 1.0.
    pub activity: BTreeMap<(UserId, MetricId), f64>,
}

impl ServiceState {
    pub fn new(config: DeploymentConfig, store: SignalStore) -> Result<Self> {
        let activity = match &config.activity_levels {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                read_activity_csv(file)?
            }
            None => BTreeMap::new(),
        };
        Ok(ServiceState {
            config,
            store,
            activity,
        })
    }

    fn activity_for(&self, user: &UserId, metrics: &[MetricId]) -> ActivityLevels {
        metrics
            .iter()
            .map(|m| {
                let level = self
                    .activity
                    .get(&(user.clone(), m.clone()))
                    .copied()
                    .unwrap_or(1.0);
                (m.clone(), level)
            })
            .collect()
    }
}

/// CSV row shape: `user,metric,level`.
#[derive(Debug, Serialize, Deserialize)]
struct ActivityCsvRow {
    user: String,
    metric: String,
    level: f64,
}

/// Load per-user channel activity gates.
pub fn read_activity_csv<R: std::io::Read>(
    reader: R,
) -> Result<BTreeMap<(UserId, MetricId), f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: ActivityCsvRow = row?;
        if !(0.0..=1.0).contains(&row.level) {
            return Err(Error::Parse(format!(
                "activity level {} for ({}, {}) outside [0, 1]",
                row.level, row.user, row.metric
            )));
        }
        out.insert((UserId(row.user), MetricId(row.metric)), row.level);
    }
    Ok(out)
}

/// Per-request failure record; serialized in place of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestError {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_case: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

/// One line of batch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchOutcome {
    Plan(ExecutionPlan),
    Error(RequestError),
}

impl BatchOutcome {
    pub fn plan(&self) -> Option<&ExecutionPlan> {
        match self {
            BatchOutcome::Plan(p) => Some(p),
            BatchOutcome::Error(_) => None,
        }
    }

    fn from_error(request: &SchedulingRequest, err: &Error) -> Self {
        BatchOutcome::Error(RequestError {
            error: err.code().to_string(),
            message: err.to_string(),
            use_case: Some(request.use_case.to_string()),
            user: Some(request.user.to_string()),
        })
    }
}

/// Request seed: batch seed mixed with the request's identifying fields, so
/// identical batches replay and per-user streams stay independent.
fn request_seed(seed: u64, request: &SchedulingRequest) -> u64 {
    StableHasher::new(seed)
        .write_str("request")
        .write_str(request.use_case.as_str())
        .write_str(request.user.as_str())
        .write_i64(request.t_start)
        .write_i64(request.t_end)
        .write_u64(request.n as u64)
        .write_i64(request.slot_length)
        .finish()
}

/// Schedule a batch; failures yield per-request error records, never a batch
/// abort.
pub fn handle_batch(
    state: &ServiceState,
    requests: &[SchedulingRequest],
    seed: u64,
) -> Vec<BatchOutcome> {
    requests
        .iter()
        .map(|request| match handle_one(state, request, seed) {
            Ok(plan) => BatchOutcome::Plan(plan),
            Err(err) => BatchOutcome::from_error(request, &err),
        })
        .collect()
}

fn handle_one(
    state: &ServiceState,
    request: &SchedulingRequest,
    seed: u64,
) -> Result<ExecutionPlan> {
    request.validate()?;
    let use_case = state.config.use_case(&request.use_case)?;
    let slots = partition_range(request.t_start, request.t_end, request.slot_length)?;

    // The metric set: a single requested metric, or the use case's assembler.
    let metrics: Vec<MetricId> = match &request.metric_spec {
        Some(metric) => {
            let metric = MetricId::from(metric.as_str());
            state.config.provider(&metric)?;
            vec![metric]
        }
        None => state
            .config
            .assembler_spec(&request.use_case)?
            .metrics()
            .to_vec(),
    };

    // One snapshot per touched day partition: reads within this request see
    // exactly one version per partition.
    let mut snapshots: BTreeMap<usize, Arc<Partition>> = BTreeMap::new();
    for slot in &slots {
        let day = slot.day_of_week() as usize;
        if let std::collections::btree_map::Entry::Vacant(e) = snapshots.entry(day) {
            e.insert(state.store.snapshot(day)?);
        }
    }

    // Stored maps are hourly day maps (slot index = hour of day); request
    // slots sample them at their starting hour.
    let mut metric_maps: BTreeMap<MetricId, TemporalActivityMap> = BTreeMap::new();
    for metric in &metrics {
        let mut entries: BTreeMap<usize, NormalizedScore> = BTreeMap::new();
        for slot in &slots {
            let day = slot.day_of_week() as usize;
            if let Some(day_map) = snapshots[&day].get(&request.user, metric) {
                if let Some(score) = day_map.get(slot.hour_of_day() as usize) {
                    entries.insert(slot.index, score);
                }
            }
        }
        if !entries.is_empty() {
            metric_maps.insert(
                metric.clone(),
                TemporalActivityMap::new(request.user.clone(), metric.clone(), entries)?,
            );
        }
    }

    let policy = request.policy.unwrap_or(use_case.policy);
    let mut effective = policy;
    effective.priority = use_case.tier.enforced_priority(policy.priority);
    let seed = request_seed(seed, request);

    // No stored signal at all: degrade to a uniform map with randomized
    // selection instead of failing the delivery.
    let assembled = if metric_maps.is_empty() {
        None
    } else if metrics.len() == 1 {
        metric_maps.remove(&metrics[0])
    } else {
        let spec = state.config.assembler_spec(&request.use_case)?;
        let gates = state.activity_for(&request.user, &metrics);
        match assemble(&spec, &metric_maps, &gates) {
            Ok(map) => Some(map),
            Err(Error::DegenerateAssembly) => None,
            Err(other) => return Err(other),
        }
    };

    match assembled {
        Some(map) => {
            let resolved = SchedulingRequest {
                policy: Some(effective),
                ..request.clone()
            };
            schedule(&resolved, &map, seed)
        }
        None => {
            let slot_indices: Vec<usize> = slots.iter().map(|s| s.index).collect();
            let uniform = TemporalActivityMap::uniform(
                request.user.clone(),
                MetricId::from("uniform-fallback"),
                &slot_indices,
            )?;
            let resolved = SchedulingRequest {
                policy: Some(effective),
                explore: true,
                ..request.clone()
            };
            let mut plan = schedule(&resolved, &uniform, seed)?;
            plan.uniform_fallback = true;
            plan.explored = request.explore;
            Ok(plan)
        }
    }
}

/// Serve JSON-line requests from a reader to a writer (one request per line;
/// blank lines skipped). Used for both stdio and socket serving.
pub fn serve_lines<R: BufRead, W: Write>(
    state: &ServiceState,
    reader: R,
    mut writer: W,
    seed: u64,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = match serde_json::from_str::<SchedulingRequest>(&line) {
            Ok(request) => handle_batch(state, &[request], seed).remove(0),
            Err(e) => BatchOutcome::Error(RequestError {
                error: "parse".into(),
                message: e.to_string(),
                use_case: None,
                user: None,
            }),
        };
        serde_json::to_writer(&mut writer, &outcome)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Serve requests over a Unix domain socket, one thread per connection.
pub fn serve_socket(state: Arc<ServiceState>, path: &Path, seed: u64) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let listener = std::os::unix::net::UnixListener::bind(path)?;
    for stream in listener.incoming() {
        let stream = stream?;
        let state = Arc::clone(&state);
        std::thread::spawn(move || {
            let reader = BufReader::new(stream.try_clone().expect("clone socket"));
            let _ = serve_lines(&state, reader, stream, seed);
        });
    }
    Ok(())
}
