//! Utilization statistics over business hours.

mod plot;
mod report;

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::demand::DemandSeries;
use crate::ingest::OpenHours;
use crate::par::{self, Execution};

pub use plot::{plot_csv, plot_svg, PlotData};
pub use report::{render_report, ReportHeader, REPORT_ROWS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("open-hours window for {0} contains no samples")]
    EmptyWindow(NaiveDate),
    #[error("no days to report")]
    NoDays,
}

/// Statistics of the samples strictly above one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub threshold: f64,
    /// Number of samples with utilization above the threshold (tau).
    pub tau: usize,
    /// `tau / n_intervals`.
    pub pct: f64,
    /// Mean utilization over those samples, 0 when `tau == 0`.
    pub peak_util: f64,
    /// `peak_util * tau` with `peak_util` as a fraction.
    pub omega: f64,
}

impl PeakStats {
    /// Omega with peak utilization in percentage points, as printed in reports.
    pub fn omega_percent(&self) -> f64 {
        self.omega * 100.0
    }
}

/// Excess demand now and at buildout for one peak utilization. Space counts
/// are signed; negative values mean spare capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessDemand {
    pub current_peak: f64,
    pub current_spaces: i64,
    pub buildout_peak: f64,
    pub buildout_spaces: i64,
}

impl ExcessDemand {
    pub fn new(peak_util: f64, threshold: f64, capacity: u32) -> Self {
        let (buildout_peak, buildout_spaces) = buildout_projection(peak_util, threshold, capacity);
        ExcessDemand {
            current_peak: peak_util,
            current_spaces: excess_demand(capacity, peak_util),
            buildout_peak,
            buildout_spaces,
        }
    }

    /// Spaces to add now, zero when there is spare capacity.
    pub fn current_summary(&self) -> i64 {
        self.current_spaces.max(0)
    }

    pub fn buildout_summary(&self) -> i64 {
        self.buildout_spaces.max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub date: NaiveDate,
    pub n_intervals: usize,
    pub avg_util: f64,
    pub max_util: f64,
    pub over_100: PeakStats,
    pub over_threshold: PeakStats,
    pub excess_100: ExcessDemand,
    pub excess_threshold: ExcessDemand,
}

/// `U(t) = D(t) / C`.
pub fn utilization_series(series: &DemandSeries, capacity: u32) -> Vec<f64> {
    let c = capacity as f64;
    series.values.iter().map(|d| *d as f64 / c).collect()
}

/// Average excess demand `C (U_peak - 1)`, rounded to whole vehicles.
pub fn excess_demand(capacity: u32, peak_util: f64) -> i64 {
    (capacity as f64 * (peak_util - 1.0)).round() as i64
}

/// Peak utilization scaled to buildout (`U_peak / U0`) and the spaces that
/// would be missing then. Spaces are signed.
pub fn buildout_projection(peak_util: f64, threshold: f64, capacity: u32) -> (f64, i64) {
    let projected = peak_util / threshold;
    (projected, excess_demand(capacity, projected))
}

fn peak_stats(samples: &[f64], threshold: f64) -> PeakStats {
    let (tau, sum) = samples
        .iter()
        .filter(|u| **u > threshold)
        .fold((0usize, 0.0f64), |(n, s), u| (n + 1, s + u));
    let peak_util = if tau == 0 { 0.0 } else { sum / tau as f64 };
    PeakStats {
        threshold,
        tau,
        pct: tau as f64 / samples.len() as f64,
        peak_util,
        omega: peak_util * tau as f64,
    }
}

/// Metrics for the samples of `util` inside `window`, at both the 100% and
/// the `threshold` levels.
pub fn day_metrics(
    util: &[f64],
    window: Range<usize>,
    threshold: f64,
    capacity: u32,
    date: NaiveDate,
) -> Result<DayMetrics, MetricsError> {
    let samples = util
        .get(window)
        .filter(|s| !s.is_empty())
        .ok_or(MetricsError::EmptyWindow(date))?;
    let n = samples.len();
    let avg_util = samples.iter().sum::<f64>() / n as f64;
    let max_util = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let over_100 = peak_stats(samples, 1.0);
    let over_threshold = peak_stats(samples, threshold);
    Ok(DayMetrics {
        date,
        n_intervals: n,
        avg_util,
        max_util,
        over_100,
        over_threshold,
        excess_100: ExcessDemand::new(over_100.peak_util, threshold, capacity),
        excess_threshold: ExcessDemand::new(over_threshold.peak_util, threshold, capacity),
    })
}

/// Contiguous open-hours sample ranges, one per calendar date with at least
/// one open sample.
pub fn open_windows(series: &DemandSeries, hours: &OpenHours) -> Vec<(NaiveDate, Range<usize>)> {
    let mut out: Vec<(NaiveDate, Range<usize>)> = Vec::new();
    for n in 0..series.values.len() {
        let t = series.time_at(n);
        if !hours.is_open(t) {
            continue;
        }
        match out.last_mut() {
            Some((date, range)) if *date == t.date() && range.end == n => range.end = n + 1,
            _ => out.push((t.date(), n..n + 1)),
        }
    }
    out
}

/// [`day_metrics`] for every open day of a (corrected) series.
pub fn series_metrics(
    series: &DemandSeries,
    hours: &OpenHours,
    threshold: f64,
    capacity: u32,
    exec: Execution,
) -> Result<Vec<DayMetrics>, MetricsError> {
    let util = utilization_series(series, capacity);
    let windows = open_windows(series, hours);
    par::map(&windows, exec, |(date, range)| {
        day_metrics(&util, range.clone(), threshold, capacity, *date)
    })
    .into_iter()
    .collect()
}

// Worst first: Omega descending, then tau descending, then earliest date.
fn rank_by_key<F, G>(metrics: &[DayMetrics], omega: F, tau: G) -> Vec<DayMetrics>
where
    F: Fn(&DayMetrics) -> f64,
    G: Fn(&DayMetrics) -> usize,
{
    let mut out = metrics.to_vec();
    out.sort_by(|a, b| {
        omega(b)
            .total_cmp(&omega(a))
            .then(tau(b).cmp(&tau(a)))
            .then(a.date.cmp(&b.date))
    });
    out
}

/// Ranks days by the threshold-level Omega.
pub fn rank_days(metrics: &[DayMetrics]) -> Vec<DayMetrics> {
    rank_by_key(
        metrics,
        |m| m.over_threshold.omega,
        |m| m.over_threshold.tau,
    )
}

/// Ranks days by the 100%-level Omega.
pub fn rank_days_over_capacity(metrics: &[DayMetrics]) -> Vec<DayMetrics> {
    rank_by_key(metrics, |m| m.over_100.omega, |m| m.over_100.tau)
}
