//! Offline ranking quality and experiment reporting.
//!
//! NDCG scores a predicted slot order against the user's actual per-slot
//! activity; efficiency ratios summarize experiment arms; cohort reports break
//! a metric down by user activity deciles on one or two channels. Everything
//! is pure and reentrant; batch evaluation aggregates in deterministic order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::UserId;

/// NDCG of one user's prediction at cutoff `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport {
    pub user: UserId,
    pub k: usize,
    pub ndcg: f64,
    /// Every gain was zero; the score is 1.0 by convention and the user
    /// should be reported separately so they cannot silently inflate means.
    pub all_zero_gains: bool,
}

fn dcg(gains: impl Iterator<Item = f64>, k: usize) -> f64 {
    gains
        .take(k)
        .enumerate()
        .map(|(i, gain)| gain / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain at cutoff `k`.
///
/// The gain of a slot is its actual activity value (graded relevance; absent
/// slots gain 0). The ideal ordering sorts all known gains descending. When
/// every gain is zero there is no ranking to get wrong, so the score is 1.0.
pub fn ndcg(
    predicted_order: &[usize],
    actual_gains: &BTreeMap<usize, f64>,
    k: usize,
) -> Result<f64> {
    if predicted_order.is_empty() {
        return Err(Error::InvalidArgument("empty prediction".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    if let Some((slot, &gain)) = actual_gains.iter().find(|(_, &g)| !g.is_finite() || g < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gain for slot {slot} must be non-negative and finite, got {gain}"
        )));
    }
    let predicted = dcg(
        predicted_order
            .iter()
            .map(|slot| actual_gains.get(slot).copied().unwrap_or(0.0)),
        k,
    );
    let mut ideal_gains: Vec<f64> = actual_gains.values().copied().collect();
    ideal_gains.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(ideal_gains.into_iter(), k);
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok(predicted / ideal)
}

/// NDCG wrapped in a per-user report row.
pub fn ndcg_report(
    user: UserId,
    predicted_order: &[usize],
    actual_gains: &BTreeMap<usize, f64>,
    k: usize,
) -> Result<NdcgReport> {
    let score = ndcg(predicted_order, actual_gains, k)?;
    Ok(NdcgReport {
        user,
        k,
        ndcg: score,
        all_zero_gains: actual_gains.values().all(|&g| g == 0.0),
    })
}

/// Downstream metric total divided by execution volume.
pub fn efficiency_ratio(metric_total: f64, execution_volume: u64) -> Result<f64> {
    if execution_volume == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(metric_total / execution_volume as f64)
}

/// Relative lift of a test quantity over a control quantity.
pub fn relative_lift(test: f64, control: f64) -> Result<f64> {
    if control == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok((test - control) / control)
}

/// Efficiency summary of one experiment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub group: String,
    pub metric_total: f64,
    pub execution_volume: u64,
    pub efficiency: f64,
}

impl EfficiencyReport {
    pub fn new(group: impl Into<String>, metric_total: f64, execution_volume: u64) -> Result<Self> {
        Ok(EfficiencyReport {
            group: group.into(),
            metric_total,
            execution_volume,
            efficiency: efficiency_ratio(metric_total, execution_volume)?,
        })
    }
}

/// Activity deciles on one or two channels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CohortKey {
    pub deciles: Vec<u8>,
}

impl fmt::Display for CohortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.deciles.iter().map(|d| format!("d{d}")).collect();
        f.write_str(&parts.join("x"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortCell {
    pub count: usize,
    pub mean: f64,
}

/// Per-cohort means of a metric over the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub dims: usize,
    pub cells: BTreeMap<CohortKey, CohortCell>,
}

/// One user's contribution to a cohort report.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub user: UserId,
    /// Activity level per requested channel dimension.
    pub activity: Vec<f64>,
    pub metric: f64,
}

/// Decile by empirical CDF: `min(9, floor(10 * P(value <= v)))`.
///
/// Identical populations collapse into decile 9 instead of spreading over
/// arbitrary cells, and cell counts always sum to the population size.
fn decile_assignments(values: &[f64]) -> Vec<u8> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    values
        .iter()
        .map(|v| {
            let le = sorted.partition_point(|x| x <= v) as f64;
            ((le * 10.0 / n).floor() as u8).min(9)
        })
        .collect()
}

/// Break a per-user metric down by activity deciles on `dims` channels (1 or 2).
///
/// Deciles are computed over the supplied population. Cohorts with no users
/// are omitted.
pub fn cohort_report(rows: &[CohortRow], dims: usize) -> Result<CohortTable> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no users to cohort".into()));
    }
    if dims == 0 || dims > 2 {
        return Err(Error::InvalidArgument(format!(
            "cohort dims must be 1 or 2, got {dims}"
        )));
    }
    if let Some(row) = rows.iter().find(|r| r.activity.len() < dims) {
        return Err(Error::InvalidArgument(format!(
            "user {} has {} activity dims, need {dims}",
            row.user,
            row.activity.len()
        )));
    }
    let per_dim_deciles: Vec<Vec<u8>> = (0..dims)
        .map(|d| {
            let values: Vec<f64> = rows.iter().map(|r| r.activity[d]).collect();
            decile_assignments(&values)
        })
        .collect();

    let mut sums: BTreeMap<CohortKey, (usize, f64)> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let key = CohortKey {
            deciles: (0..dims).map(|d| per_dim_deciles[d][i]).collect(),
        };
        let entry = sums.entry(key).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += row.metric;
    }
    Ok(CohortTable {
        dims,
        cells: sums
            .into_iter()
            .map(|(key, (count, total))| {
                (
                    key,
                    CohortCell {
                        count,
                        mean: total / count as f64,
                    },
                )
            })
            .collect(),
    })
}

impl CohortTable {
    pub fn population(&self) -> usize {
        self.cells.values().map(|c| c.count).sum()
    }

    /// Long-format CSV: one row per populated cell
    /// (`decile_1[,decile_2],count,mean`), plotting-tool friendly.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dims).map(|d| format!("decile_{d}")).collect();
        header.push("count".into());
        header.push("mean".into());
        w.write_record(&header)?;
        for (key, cell) in &self.cells {
            let mut record: Vec<String> = key.deciles.iter().map(|d| d.to_string()).collect();
            record.push(cell.count.to_string());
            record.push(format!("{:.6}", cell.mean));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for CohortTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut headers = vec!["cohort".to_string()];
        headers.extend(["count".to_string(), "mean".to_string()]);
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|(key, cell)| {
                vec![
                    key.to_string(),
                    cell.count.to_string(),
                    format!("{:.4}", cell.mean),
                ]
            })
            .collect();
        f.write_str(&render_table(&headers, &rows))
    }
}

/// Kendall rank correlation (tau-a) between two parallel score slices.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "kendall_tau needs parallel slices");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = (a[i] - a[j]).signum();
            let db = (b[i] - b[j]).signum();
            let prod = da * db;
            if prod > 0.0 {
                concordant += 1;
            } else if prod < 0.0 {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    (concordant - discordant) as f64 / pairs
}

/// Render an aligned plain-text table.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out.push_str(&fmt_row(headers, &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row, &widths));
        out.push('\n');
    }
    out
}
