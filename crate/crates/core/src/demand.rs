//! Counter merge, record filters and demand accumulation.

use chrono::{Duration, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::ingest::{CountConfig, VehicleRecord};
use crate::FPS_PER_MPH;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DemandError {
    #[error("record at {record} precedes the count start {start}")]
    BeforeStart {
        record: NaiveDateTime,
        start: NaiveDateTime,
    },
    #[error("sampling interval must be at least 1 second")]
    ZeroInterval,
}

/// Predicted lot demand sampled every `interval_s` seconds from `start`.
///
/// `values[n]` is the demand after `n` intervals, i.e. it counts every record
/// with timestamp before `start + n * interval_s`. `day_boundaries` holds the
/// sample index that closes each day; the last boundary is always the final
/// sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub start: NaiveDateTime,
    pub interval_s: u32,
    pub values: Vec<i64>,
    pub day_boundaries: Vec<usize>,
}

impl DemandSeries {
    /// Number of intervals N; `values.len() == N + 1`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time_at(&self, n: usize) -> NaiveDateTime {
        self.start + Duration::seconds(n as i64 * self.interval_s as i64)
    }

    /// First sample that includes events at time `t`, clamped to the series.
    pub fn index_after(&self, t: NaiveDateTime) -> usize {
        let secs = (t - self.start).num_seconds();
        if secs < 0 {
            return 0;
        }
        ((secs / self.interval_s as i64) as usize + 1).min(self.intervals())
    }

    pub fn negative_samples(&self) -> usize {
        self.values.iter().filter(|v| **v < 0).count()
    }

    pub fn final_value(&self) -> i64 {
        *self.values.last().expect("series is never empty")
    }

    /// Occurrences of `tod` strictly after `start` whose sample lies before
    /// the final one.
    pub fn instants_at(&self, tod: NaiveTime) -> Vec<NaiveDateTime> {
        let n = self.intervals();
        let mut out: Vec<NaiveDateTime> = Vec::new();
        let mut date = self.start.date();
        loop {
            let b = date.and_time(tod);
            if b > self.start {
                let idx = self.index_after(b);
                if idx >= n {
                    break;
                }
                if out.last().map(|p| self.index_after(*p)) != Some(idx) {
                    out.push(b);
                }
            }
            date = date.succ_opt().expect("date in range");
        }
        out
    }

    /// Day boundaries at every occurrence of `tod` strictly after `start`,
    /// plus the final sample.
    pub fn boundaries_at(&self, tod: NaiveTime) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .instants_at(tod)
            .into_iter()
            .map(|b| self.index_after(b))
            .collect();
        out.push(self.intervals());
        out
    }

    /// Day index owning sample `n`: day j covers `(b[j-1], b[j]]`.
    pub fn day_of(&self, n: usize) -> usize {
        self.day_boundaries.partition_point(|b| *b < n)
    }
}

/// Thresholds for dropping double counts relative to the preceding record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalsePositiveRule {
    pub max_headway_s: f64,
    pub max_speed_mph: f64,
    pub max_gap_ft: f64,
    #[serde(default)]
    pub require_zero_wheelbase: bool,
}

impl FalsePositiveRule {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_headway_s", self.max_headway_s),
            ("max_speed_mph", self.max_speed_mph),
            ("max_gap_ft", self.max_gap_ft),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Merges per-counter record lists into one chronological list. Ties sort
/// by counter id, then Enter before Exit; the sort is stable otherwise.
pub fn merge_counts(record_sets: &[Vec<VehicleRecord>]) -> Vec<VehicleRecord> {
    let mut all: Vec<VehicleRecord> = record_sets.iter().flatten().cloned().collect();
    all.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.counter_id.cmp(&b.counter_id))
            .then(a.direction.cmp(&b.direction))
    });
    all
}

/// Keeps records with `w_min <= wheelbase <= w_max`. Unknown (zero)
/// wheelbases are kept unless `exclude_unknown` is set.
pub fn filter_wheelbase(
    records: &[VehicleRecord],
    w_min: f64,
    w_max: f64,
    exclude_unknown: bool,
) -> Vec<VehicleRecord> {
    records
        .iter()
        .filter(|r| wheelbase_passes(r, w_min, w_max, exclude_unknown))
        .cloned()
        .collect()
}

pub(crate) fn wheelbase_passes(
    r: &VehicleRecord,
    w_min: f64,
    w_max: f64,
    exclude_unknown: bool,
) -> bool {
    if !r.has_known_wheelbase() {
        return !exclude_unknown;
    }
    r.wheelbase_ft >= w_min && r.wheelbase_ft <= w_max
}

/// Splits records into (kept, flagged). A record is flagged when, relative
/// to its predecessor in the input, headway, speed and gap are all within
/// the rule's maxima and, if required, its wheelbase is unknown. Missing
/// headway/gap columns are derived from timestamps and the predecessor's speed.
pub fn flag_false_positives(
    records: &[VehicleRecord],
    rule: &FalsePositiveRule,
) -> (Vec<VehicleRecord>, Vec<VehicleRecord>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut flagged = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let is_fp = i > 0 && {
            let prev = &records[i - 1];
            let headway = r.headway_s.unwrap_or_else(|| {
                (r.timestamp - prev.timestamp).num_milliseconds() as f64 / 1000.0
            });
            let gap = r.gap_ft.unwrap_or(headway * prev.speed_mph * FPS_PER_MPH);
            headway <= rule.max_headway_s
                && r.speed_mph <= rule.max_speed_mph
                && gap <= rule.max_gap_ft
                && (!rule.require_zero_wheelbase || !r.has_known_wheelbase())
        };
        if is_fp {
            flagged.push(r.clone());
        } else {
            kept.push(r.clone());
        }
    }
    (kept, flagged)
}

/// Accumulates demand from `config.initial_observed` (0 when absent) with
/// day boundaries at the config's dead-of-night time.
pub fn compute_demand(
    records: &[VehicleRecord],
    config: &CountConfig,
) -> Result<DemandSeries, DemandError> {
    let mut series = accumulate(
        records,
        config.start_datetime,
        config.sampling_interval_s,
        config.initial_observed.unwrap_or(0) as i64,
        config.end_datetime,
    )?;
    series.day_boundaries = series.boundaries_at(config.dead_of_night.0);
    let negatives = series.negative_samples();
    if negatives > 0 {
        log::warn!("{negatives} demand samples are negative before correction");
    }
    Ok(series)
}

/// Sampled demand with a single boundary at the last sample.
///
/// A record at `t` lands in interval `floor((t - start) / T) + 1`; the series
/// extends to the last record's interval or to `end`, whichever is later.
pub fn accumulate(
    records: &[VehicleRecord],
    start: NaiveDateTime,
    interval_s: u32,
    initial: i64,
    end: Option<NaiveDateTime>,
) -> Result<DemandSeries, DemandError> {
    if interval_s == 0 {
        return Err(DemandError::ZeroInterval);
    }
    let t = interval_s as i64;
    let mut n_intervals: usize = end
        .map(|e| ((e - start).num_seconds().max(0) + t - 1) / t)
        .unwrap_or(0) as usize;
    let mut bins: Vec<(usize, i64)> = Vec::with_capacity(records.len());
    for r in records {
        let secs = (r.timestamp - start).num_seconds();
        if secs < 0 {
            return Err(DemandError::BeforeStart {
                record: r.timestamp,
                start,
            });
        }
        let bin = (secs / t) as usize + 1;
        n_intervals = n_intervals.max(bin);
        bins.push((bin, r.direction.delta()));
    }
    let mut increments = vec![0i64; n_intervals + 1];
    for (bin, d) in bins {
        increments[bin] += d;
    }
    let mut values = Vec::with_capacity(n_intervals + 1);
    let mut acc = initial;
    values.push(acc);
    for inc in &increments[1..] {
        acc += inc;
        values.push(acc);
    }
    Ok(DemandSeries {
        start,
        interval_s,
        values,
        day_boundaries: vec![n_intervals],
    })
}
