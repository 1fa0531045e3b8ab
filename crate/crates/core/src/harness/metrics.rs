//! Per-replication outcomes and their aggregation.

use std::time::Duration;

use crate::domain::Label;
use crate::error::Result;
use crate::wcp::PredictionSet;

use super::config::{Method, Task};

/// What one prediction set did on one test point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub covered: bool,
    pub finite: bool,
    /// Interval length (regression) or number of labels (classification).
    pub size: f64,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn of(set: &PredictionSet, truth: &Label, elapsed: Duration) -> Result<Self> {
        Ok(Self { covered: set.contains(truth)?, finite: set.is_finite(), size: set.size(), elapsed })
    }
}

/// Aggregated metrics for one (method, grid point) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub task: Task,
    pub method: Method,
    pub grid_key: String,
    pub alpha: f64,
    pub replications: usize,
    /// Marginal coverage probability.
    pub mcp: f64,
    /// Proportion of finite sets.
    pub pfi: f64,
    /// Median length over finite sets (regression tasks, `inf` when none is
    /// finite) or mean set size (classification).
    pub medl_or_size: f64,
    /// Coverage among replications with a finite set; NaN when none is.
    pub conditional_coverage: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn find(&self, method: Method, grid_key: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.grid_key == grid_key)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Median of the values, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Reduces outcomes from `replications` runs. The result depends only on the
/// multiset of outcomes, not on their order.
pub fn aggregate(
    task: Task,
    method: Method,
    grid_key: &str,
    alpha: f64,
    outcomes: &[Outcome],
    record_runtime: bool,
) -> MetricsRow {
    let r = outcomes.len();
    let n = r as f64;
    let covered = outcomes.iter().filter(|o| o.covered).count();
    let finite: Vec<&Outcome> = outcomes.iter().filter(|o| o.finite).collect();
    let finite_covered = finite.iter().filter(|o| o.covered).count();
    let medl_or_size = match task {
        Task::Classification => outcomes.iter().map(|o| o.size).sum::<f64>() / n,
        _ => median(&finite.iter().map(|o| o.size).collect::<Vec<_>>()).unwrap_or(f64::INFINITY),
    };
    // Integer nanoseconds sum exactly, so the total is order independent.
    let nanos: u128 = outcomes.iter().map(|o| o.elapsed.as_nanos()).sum();
    MetricsRow {
        task,
        method,
        grid_key: grid_key.to_string(),
        alpha,
        replications: r,
        mcp: covered as f64 / n,
        pfi: finite.len() as f64 / n,
        medl_or_size,
        conditional_coverage: if finite.is_empty() { f64::NAN } else { finite_covered as f64 / finite.len() as f64 },
        runtime_seconds: if record_runtime { nanos as f64 * 1e-9 } else { 0.0 },
    }
}
