//! Daily drift correction.
//!
//! The cumulative error at the end of day `j` is `sigma[j] = D_j - truth_j`
//! and the daily error is `epsilon[j] = sigma[j] - sigma[j-1]` with
//! `epsilon[0] = sigma[0]`, so the daily errors always sum to the error at the
//! end of the count. Correction subtracts `sigma[j]` from every sample of day
//! `j`, which pins each day's closing value to its ground truth.
//!
//! Ground truth comes either from observations (standard method) or from an
//! expected-demand vector inferred from overnight traffic (augmented method).

use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::demand::DemandSeries;
use crate::ingest::{OpenHours, VehicleRecord};
use crate::Direction;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorrectionError {
    #[error("{targets} ground-truth values supplied for {boundaries} day boundaries")]
    BoundaryMismatch { boundaries: usize, targets: usize },
    #[error("day boundary {index} is outside a series of {len} samples")]
    BoundaryOutOfRange { index: usize, len: usize },
    #[error("augmented method unavailable: no vehicle enters after the first dead-of-night time")]
    AnchorUnavailable,
    #[error("expected-demand anchor {0} lies beyond the end of the series")]
    AnchorOutOfRange(NaiveDateTime),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyErrorVector {
    pub epsilon: Vec<i64>,
    pub sigma: Vec<i64>,
}

impl DailyErrorVector {
    /// Number of full days M (entries are indexed 0..=M).
    pub fn full_days(&self) -> usize {
        self.sigma.len().saturating_sub(1)
    }

    pub fn from_pairs(predicted: &[i64], truth: &[i64]) -> Self {
        let sigma: Vec<i64> = predicted.iter().zip(truth).map(|(d, t)| d - t).collect();
        let epsilon = sigma
            .iter()
            .enumerate()
            .map(|(j, s)| if j == 0 { *s } else { s - sigma[j - 1] })
            .collect();
        DailyErrorVector { epsilon, sigma }
    }
}

/// Expected demand at `t0 + j` days, j = 0..=M.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDemandVector {
    pub t0: NaiveDateTime,
    pub values: Vec<i64>,
}

impl ExpectedDemandVector {
    pub fn anchor(&self, j: usize) -> NaiveDateTime {
        self.t0 + Duration::days(j as i64)
    }

    pub fn full_days(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Corrected demand plus the number of samples clamped at zero in each day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedSeries {
    pub series: DemandSeries,
    pub clamp_counts: Vec<usize>,
    /// Corrected values before clamping.
    pub unclamped: Vec<i64>,
}

fn values_at_boundaries(series: &DemandSeries) -> Result<Vec<i64>, CorrectionError> {
    series
        .day_boundaries
        .iter()
        .map(|&b| {
            series
                .values
                .get(b)
                .copied()
                .ok_or(CorrectionError::BoundaryOutOfRange {
                    index: b,
                    len: series.values.len(),
                })
        })
        .collect()
}

/// Daily errors against ground truth given at each of the series' day
/// boundaries (Day 0 included).
pub fn daily_errors(
    series: &DemandSeries,
    ground_truth: &[i64],
) -> Result<DailyErrorVector, CorrectionError> {
    if ground_truth.len() != series.day_boundaries.len() {
        return Err(CorrectionError::BoundaryMismatch {
            boundaries: series.day_boundaries.len(),
            targets: ground_truth.len(),
        });
    }
    let predicted = values_at_boundaries(series)?;
    Ok(DailyErrorVector::from_pairs(&predicted, ground_truth))
}

/// Subtracts `sigma[j]` from every sample of day `j` and clamps at zero.
/// Samples after the last boundary keep the last day's offset.
pub fn apply_phantom(series: &DemandSeries, errors: &DailyErrorVector) -> CorrectedSeries {
    let days = errors.sigma.len();
    let mut clamp_counts = vec![0usize; days.max(1)];
    let mut unclamped = Vec::with_capacity(series.values.len());
    let mut values = Vec::with_capacity(series.values.len());
    for (n, v) in series.values.iter().enumerate() {
        let day = series.day_of(n).min(days.saturating_sub(1));
        let offset = errors.sigma.get(day).copied().unwrap_or(0);
        let c = v - offset;
        unclamped.push(c);
        if c < 0 {
            clamp_counts[day] += 1;
            values.push(0);
        } else {
            values.push(c);
        }
    }
    for (day, n) in clamp_counts.iter().enumerate() {
        if *n > 0 {
            log::warn!("day {day}: {n} corrected samples clamped at zero");
        }
    }
    CorrectedSeries {
        series: DemandSeries {
            values,
            ..series.clone()
        },
        clamp_counts,
        unclamped,
    }
}

/// Lower bound on occupancy at `to` from events in `[from, to]`: Enter
/// raises the bound, Exit lowers it but never below zero.
pub fn infer_dead_of_night_floor(
    records: &[VehicleRecord],
    from: NaiveDateTime,
    to: NaiveDateTime,
) -> i64 {
    records
        .iter()
        .filter(|r| r.timestamp >= from && r.timestamp <= to)
        .fold(0i64, |floor, r| match r.direction {
            Direction::Enter => floor + 1,
            Direction::Exit => (floor - 1).max(0),
        })
}

/// Start of the overnight window ending at `at`: the most recent closing
/// time at or before `at`, looking back at most one calendar day, and never
/// earlier than `not_before`.
pub fn night_window_start(
    at: NaiveDateTime,
    hours: &OpenHours,
    not_before: NaiveDateTime,
) -> NaiveDateTime {
    use chrono::Datelike;
    let same_day = at.date();
    let candidates = [same_day, same_day.pred_opt().expect("date in range")];
    let close = candidates.iter().find_map(|d| {
        hours
            .for_weekday(d.weekday())
            .map(|w| d.and_time(w.close()))
            .filter(|c| *c <= at)
    });
    close.unwrap_or(not_before).max(not_before)
}

/// Last whole second counted by the sample that contains `t`. Floors are
/// inferred up to here so they see the same records as the sampled demand.
pub fn bin_last_second(t: NaiveDateTime, start: NaiveDateTime, interval_s: u32) -> NaiveDateTime {
    let secs = (t - start).num_seconds().max(0);
    let t = interval_s.max(1) as i64;
    start + Duration::seconds((secs / t + 1) * t - 1)
}

/// Standard-method ground truth at each boundary: explicit values when
/// given, otherwise overnight floors for intermediate days and the final
/// observation at the end.
pub fn standard_ground_truth(
    series: &DemandSeries,
    records: &[VehicleRecord],
    dead_of_night: NaiveTime,
    hours: &OpenHours,
    final_observed: i64,
) -> Vec<i64> {
    let instants = series.instants_at(dead_of_night);
    let mut truth: Vec<i64> = instants
        .iter()
        .map(|b| {
            let to = bin_last_second(*b, series.start, series.interval_s);
            infer_dead_of_night_floor(records, night_window_start(*b, hours, series.start), to)
        })
        .collect();
    truth.truncate(series.day_boundaries.len().saturating_sub(1));
    truth.push(final_observed);
    truth
}

/// First Enter at or after the first dead-of-night time following `start`.
pub fn find_anchor(
    records: &[VehicleRecord],
    start: NaiveDateTime,
    dead_of_night: NaiveTime,
) -> Option<NaiveDateTime> {
    let mut first_don = start.date().and_time(dead_of_night);
    if first_don <= start {
        first_don += Duration::days(1);
    }
    records
        .iter()
        .filter(|r| r.direction == Direction::Enter && r.timestamp >= first_don)
        .map(|r| r.timestamp)
        .min()
}

/// Whole days after `t0` whose anchor still lies within the series.
pub fn augmented_full_days(series: &DemandSeries, t0: NaiveDateTime) -> usize {
    let end = series.time_at(series.intervals());
    let mut m = 0;
    while t0 + Duration::days(m as i64 + 1) < end {
        m += 1;
    }
    m
}

/// Expected demand at the anchor `t0` and the same time of day on each of
/// the next `full_days` days.
///
/// `ED(t0) = 1` for the anchoring vehicle. Later entries are the overnight
/// floor over the window closing at the anchor instant, so an Enter exactly at
/// the anchor contributes its +1 and quiet nights contribute nothing else.
/// Windows run to the end of the anchor's sample bin.
pub fn build_expected_demand(
    records: &[VehicleRecord],
    start: NaiveDateTime,
    interval_s: u32,
    dead_of_night: NaiveTime,
    hours: &OpenHours,
    full_days: usize,
) -> Result<ExpectedDemandVector, CorrectionError> {
    let t0 =
        find_anchor(records, start, dead_of_night).ok_or(CorrectionError::AnchorUnavailable)?;
    let mut values = Vec::with_capacity(full_days + 1);
    values.push(1);
    for j in 1..=full_days {
        let anchor = t0 + Duration::days(j as i64);
        let from = night_window_start(anchor, hours, t0);
        values.push(infer_dead_of_night_floor(
            records,
            from,
            bin_last_second(anchor, start, interval_s),
        ));
    }
    Ok(ExpectedDemandVector { t0, values })
}

/// Re-anchors the series so that `D(t0) = ED(t0)`, places day boundaries at
/// each `t0 + j`, and computes the daily errors against `ed`.
///
/// Samples up to `t0` form day 0, whose error is zero by construction.
pub fn augmented_daily_errors(
    series: &DemandSeries,
    ed: &ExpectedDemandVector,
) -> Result<(DemandSeries, DailyErrorVector), CorrectionError> {
    let end = series.time_at(series.intervals());
    let mut boundaries = Vec::with_capacity(ed.values.len());
    for j in 0..ed.values.len() {
        let anchor = ed.anchor(j);
        if anchor > end {
            return Err(CorrectionError::AnchorOutOfRange(anchor));
        }
        boundaries.push(series.index_after(anchor));
    }
    let anchor_idx = boundaries[0];
    let shift = ed.values[0] - series.values[anchor_idx];
    let reanchored = DemandSeries {
        values: series.values.iter().map(|v| v + shift).collect(),
        day_boundaries: boundaries,
        ..series.clone()
    };
    let errors = daily_errors(&reanchored, &ed.values)?;
    Ok((reanchored, errors))
}
