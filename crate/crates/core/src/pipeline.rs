//! End-to-end analysis of one count: detection, filtering, demand,
//! correction and per-day metrics, with an audit trail.

use std::io::Write;
use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::correction::{
    apply_phantom, augmented_daily_errors, augmented_full_days, build_expected_demand,
    daily_errors, find_anchor, standard_ground_truth, CorrectedSeries, CorrectionError,
    DailyErrorVector, ExpectedDemandVector,
};
use crate::demand::{
    accumulate, flag_false_positives, merge_counts, wheelbase_passes, DemandError, DemandSeries,
};
use crate::ingest::{ConfigError, CountConfig, VehicleRecord};
use crate::metrics::{open_windows, series_metrics, DayMetrics, MetricsError};
use crate::par::Execution;
use crate::pulse_engine::{detect_with, DetectError, PairingParams};
use crate::tuner::{approximate_dead_time, input_end, CounterInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Initial and final occupancy observed on site.
    Standard,
    /// No manual counts; ground truth inferred from overnight traffic.
    Augmented,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("the standard method requires `{0}` in the configuration")]
    MissingField(&'static str),
    #[error("no input files")]
    NoInputs,
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    /// True when the augmented method could not anchor its expected demand.
    pub fn is_anchoring_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Correction(
                CorrectionError::AnchorUnavailable | CorrectionError::AnchorOutOfRange(_)
            )
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub method: Method,
    pub execution: Execution,
    /// Emulate the configured dead time on worksheet records, as tuning does.
    pub worksheet_dead_time: bool,
}

impl AnalysisOptions {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            execution: Execution::default(),
            worksheet_dead_time: false,
        }
    }
}

/// Where every raw pulse and record went.
///
/// `raw_pulses = pulses_in_records + dead_time_pulses + unclassified_pulses + ignored_pulses`
/// and `worksheet_records + detected_records = dead_time_records + filtered_wheelbase + flagged_false_positive + used_records`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CountAccounting {
    pub raw_pulses: usize,
    pub pulses_in_records: usize,
    pub dead_time_pulses: usize,
    pub unclassified_pulses: usize,
    pub ignored_pulses: usize,
    pub worksheet_records: usize,
    pub detected_records: usize,
    pub dead_time_records: usize,
    pub filtered_wheelbase: usize,
    pub flagged_false_positive: usize,
    pub used_records: usize,
}

impl CountAccounting {
    pub fn balanced(&self) -> bool {
        self.raw_pulses
            == self.pulses_in_records
                + self.dead_time_pulses
                + self.unclassified_pulses
                + self.ignored_pulses
            && self.worksheet_records + self.detected_records
                == self.dead_time_records
                    + self.filtered_wheelbase
                    + self.flagged_false_positive
                    + self.used_records
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub method: Method,
    pub records: Vec<VehicleRecord>,
    pub flagged: Vec<VehicleRecord>,
    /// Uncorrected demand with the day boundaries the correction used.
    pub raw: DemandSeries,
    pub ground_truth: Vec<i64>,
    pub errors: DailyErrorVector,
    pub expected: Option<ExpectedDemandVector>,
    pub corrected: CorrectedSeries,
    pub days: Vec<DayMetrics>,
    /// Open-hours sample range of each entry in `days`.
    pub windows: Vec<Range<usize>>,
    pub accounting: CountAccounting,
    pub threshold: f64,
}

fn check_method(config: &CountConfig, method: Method) -> Result<(), PipelineError> {
    if method == Method::Standard {
        if config.initial_observed.is_none() {
            return Err(PipelineError::MissingField("initial_observed"));
        }
        if config.final_observed.is_none() {
            return Err(PipelineError::MissingField("final_observed"));
        }
    }
    Ok(())
}

/// Detected and worksheet records merged, with the per-stage accounting.
pub fn collect_records(
    inputs: &[CounterInput],
    config: &CountConfig,
    worksheet_dead_time: bool,
) -> Result<(Vec<VehicleRecord>, CountAccounting), PipelineError> {
    let layout = config.channel_layout();
    let params = PairingParams::from_config(config, &layout);
    let mut acc = CountAccounting::default();
    let mut sets = Vec::with_capacity(inputs.len());
    for input in inputs {
        match input {
            CounterInput::Pulses { counter_id, pulses } => {
                let det = detect_with(
                    pulses,
                    &layout,
                    &params,
                    config.d_bounce_ms,
                    config.start_datetime,
                    counter_id,
                )?;
                let dropped = det.dead_time_dropped + det.unclassified + det.ignored_other_channels;
                acc.raw_pulses += pulses.len();
                acc.dead_time_pulses += det.dead_time_dropped;
                acc.unclassified_pulses += det.unclassified;
                acc.ignored_pulses += det.ignored_other_channels;
                acc.pulses_in_records += pulses.len() - dropped;
                acc.detected_records += det.records.len();
                sets.push(det.records);
            }
            CounterInput::Records { records, .. } => {
                acc.worksheet_records += records.len();
                let mut sorted = records.clone();
                sorted.sort_by_key(|r| r.timestamp);
                if worksheet_dead_time {
                    let kept = approximate_dead_time(&sorted, config.d_bounce_ms);
                    acc.dead_time_records += sorted.len() - kept.len();
                    sorted = kept;
                }
                sets.push(sorted);
            }
        }
    }
    Ok((merge_counts(&sets), acc))
}

/// Runs one count through the whole pipeline.
pub fn analyze(
    inputs: &[CounterInput],
    config: &CountConfig,
    options: &AnalysisOptions,
) -> Result<Analysis, PipelineError> {
    config.validate()?;
    check_method(config, options.method)?;
    if inputs.is_empty() {
        return Err(PipelineError::NoInputs);
    }
    let threshold = config.threshold()?;
    let (merged, mut acc) = collect_records(inputs, config, options.worksheet_dead_time)?;

    let passing: Vec<VehicleRecord> = merged
        .iter()
        .filter(|r| {
            wheelbase_passes(
                r,
                config.wheelbase_min,
                config.wheelbase_max,
                config.exclude_unknown_wheelbase,
            )
        })
        .cloned()
        .collect();
    acc.filtered_wheelbase = merged.len() - passing.len();
    let (records, flagged) = match &config.false_positive_rule {
        Some(rule) => flag_false_positives(&passing, rule),
        None => (passing, Vec::new()),
    };
    acc.flagged_false_positive = flagged.len();
    acc.used_records = records.len();
    debug_assert!(acc.balanced());
    log::info!(
        "{} records used, {} outside wheelbase range, {} flagged",
        acc.used_records,
        acc.filtered_wheelbase,
        acc.flagged_false_positive
    );

    let end = input_end(inputs, config);
    let don = config.dead_of_night.0;
    let (raw, ground_truth, errors, expected) = match options.method {
        Method::Standard => {
            let initial = config.initial_observed.expect("checked") as i64;
            let mut raw = accumulate(
                &records,
                config.start_datetime,
                config.sampling_interval_s,
                initial,
                Some(end),
            )?;
            raw.day_boundaries = raw.boundaries_at(don);
            let truth = match &config.daily_ground_truth {
                Some(t) => t.clone(),
                None => standard_ground_truth(
                    &raw,
                    &records,
                    don,
                    &config.open_hours,
                    config.final_observed.expect("checked") as i64,
                ),
            };
            let errors = daily_errors(&raw, &truth)?;
            (raw, truth, errors, None)
        }
        Method::Augmented => {
            let series = accumulate(
                &records,
                config.start_datetime,
                config.sampling_interval_s,
                0,
                Some(end),
            )?;
            let t0 = find_anchor(&records, config.start_datetime, don)
                .ok_or(CorrectionError::AnchorUnavailable)?;
            let m = augmented_full_days(&series, t0);
            let ed = build_expected_demand(
                &records,
                config.start_datetime,
                config.sampling_interval_s,
                don,
                &config.open_hours,
                m,
            )?;
            let (raw, errors) = augmented_daily_errors(&series, &ed)?;
            (raw, ed.values.clone(), errors, Some(ed))
        }
    };
    if raw.negative_samples() > 0 {
        log::warn!(
            "{} uncorrected demand samples are negative",
            raw.negative_samples()
        );
    }
    let corrected = apply_phantom(&raw, &errors);
    let days = series_metrics(
        &corrected.series,
        &config.open_hours,
        threshold,
        config.capacity,
        options.execution,
    )?;
    let windows = open_windows(&corrected.series, &config.open_hours)
        .into_iter()
        .map(|w| w.1)
        .collect();
    Ok(Analysis {
        method: options.method,
        records,
        flagged,
        raw,
        ground_truth,
        errors,
        expected,
        corrected,
        days,
        windows,
        accounting: acc,
        threshold,
    })
}

/// One date compared across methods. Differences are standard minus augmented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub date: chrono::NaiveDate,
    pub standard_avg: f64,
    pub standard_max: f64,
    pub augmented_avg: f64,
    pub augmented_max: f64,
    pub diff_avg: f64,
    pub diff_max: f64,
}

/// Dates both methods can speak for: open hours fully inside the augmented
/// method's anchored days, excluding the last day of the standard count.
pub fn compare(standard: &Analysis, augmented: &Analysis) -> Vec<ComparisonRow> {
    let Some(ed) = &augmented.expected else {
        return Vec::new();
    };
    let first = ed.t0;
    let last: NaiveDateTime = ed.anchor(ed.full_days());
    let last_standard = standard.days.last().map(|d| d.date);
    let s = &augmented.corrected.series;
    let mut rows = Vec::new();
    for sd in &standard.days {
        if Some(sd.date) == last_standard {
            continue;
        }
        let Some(i) = augmented.days.iter().position(|d| d.date == sd.date) else {
            continue;
        };
        let ad = &augmented.days[i];
        let w = &augmented.windows[i];
        if s.time_at(w.start) <= first || s.time_at(w.end - 1) > last {
            continue;
        }
        rows.push(ComparisonRow {
            date: sd.date,
            standard_avg: sd.avg_util,
            standard_max: sd.max_util,
            augmented_avg: ad.avg_util,
            augmented_max: ad.max_util,
            diff_avg: sd.avg_util - ad.avg_util,
            diff_max: sd.max_util - ad.max_util,
        });
    }
    rows
}

/// Per-day audit: boundary, predicted and true demand, errors and clamps.
pub fn write_days_audit<W: Write>(analysis: &Analysis, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "day",
        "boundary_index",
        "boundary_time",
        "predicted",
        "ground_truth",
        "sigma",
        "epsilon",
        "clamped_samples",
    ])?;
    let raw = &analysis.raw;
    for (j, b) in raw.day_boundaries.iter().enumerate() {
        w.write_record([
            j.to_string(),
            b.to_string(),
            raw.time_at(*b).format("%Y-%m-%d %H:%M:%S").to_string(),
            raw.values[*b].to_string(),
            analysis
                .ground_truth
                .get(j)
                .map(|v| v.to_string())
                .unwrap_or_default(),
            analysis
                .errors
                .sigma
                .get(j)
                .map(|v| v.to_string())
                .unwrap_or_default(),
            analysis
                .errors
                .epsilon
                .get(j)
                .map(|v| v.to_string())
                .unwrap_or_default(),
            analysis
                .corrected
                .clamp_counts
                .get(j)
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_accounting<W: Write>(acc: &CountAccounting, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stage", "count"])?;
    for (stage, n) in [
        ("raw_pulses", acc.raw_pulses),
        ("pulses_in_records", acc.pulses_in_records),
        ("dead_time_pulses", acc.dead_time_pulses),
        ("unclassified_pulses", acc.unclassified_pulses),
        ("ignored_pulses", acc.ignored_pulses),
        ("worksheet_records", acc.worksheet_records),
        ("detected_records", acc.detected_records),
        ("dead_time_records", acc.dead_time_records),
        ("filtered_wheelbase", acc.filtered_wheelbase),
        ("flagged_false_positive", acc.flagged_false_positive),
        ("used_records", acc.used_records),
    ] {
        w.write_record([stage.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[VehicleRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "timestamp",
        "counter_id",
        "direction",
        "speed_mph",
        "wheelbase_ft",
        "gap_ft",
        "headway_s",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            r.counter_id.clone(),
            r.direction.to_string(),
            r.speed_mph.to_string(),
            r.wheelbase_ft.to_string(),
            opt(r.gap_ft),
            opt(r.headway_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison<W: Write>(rows: &[ComparisonRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "date",
        "standard_avg_pct",
        "standard_max_pct",
        "augmented_avg_pct",
        "augmented_max_pct",
        "diff_avg_pct",
        "diff_max_pct",
    ])?;
    let pct = |v: f64| format!("{:.1}", v * 100.0);
    for r in rows {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            pct(r.standard_avg),
            pct(r.standard_max),
            pct(r.augmented_avg),
            pct(r.augmented_max),
            pct(r.diff_avg),
            pct(r.diff_max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Side-by-side layout: a block of dates per method, then difference rows.
pub fn write_comparison_wide<W: Write>(
    rows: &[ComparisonRow],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let n = rows.len();
    let pct = |v: f64| format!("{:.1}%", v * 100.0);
    let blank = || std::iter::repeat_n(String::new(), n.saturating_sub(1));

    let mut title = vec![
        String::new(),
        "Standard Method (Manual Counting of Lots)".to_string(),
    ];
    title.extend(blank());
    title.push("Augmented Method (No Manual Counting of Lots)".to_string());
    title.extend(blank());
    w.write_record(&title)?;

    let dates: Vec<String> = rows
        .iter()
        .map(|r| r.date.format("%m/%d/%y").to_string())
        .collect();
    let mut header = vec![String::new()];
    header.extend(dates.iter().cloned().chain(dates.iter().cloned()));
    w.write_record(&header)?;

    type Pick = fn(&ComparisonRow) -> (f64, f64, f64);
    let lines: [(&str, Pick); 2] = [
        ("Average utilization:", |r| {
            (r.standard_avg, r.augmented_avg, r.diff_avg)
        }),
        ("Maximum utilization:", |r| {
            (r.standard_max, r.augmented_max, r.diff_max)
        }),
    ];
    for (label, pick) in lines {
        let mut row = vec![label.to_string()];
        row.extend(rows.iter().map(|r| pct(pick(r).0)));
        row.extend(rows.iter().map(|r| pct(pick(r).1)));
        w.write_record(&row)?;
    }
    for (i, (_, pick)) in lines.iter().enumerate() {
        let mut row = vec![if i == 0 {
            "Difference:".to_string()
        } else {
            String::new()
        }];
        row.extend(std::iter::repeat_n(String::new(), n));
        row.extend(rows.iter().map(|r| pct(pick(r).2)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable run summary.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub lot_name: &'a str,
    pub method: Method,
    pub capacity: u32,
    pub threshold: f64,
    pub d_bounce_ms: u64,
    pub wheelbase_min: f64,
    pub wheelbase_max: Option<f64>,
    pub errors: &'a DailyErrorVector,
    pub ground_truth: &'a [i64],
    pub clamp_counts: &'a [usize],
    pub expected_demand: Option<&'a ExpectedDemandVector>,
    pub accounting: CountAccounting,
    pub days: Vec<DaySummary<'a>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DaySummary<'a> {
    #[serde(flatten)]
    pub metrics: &'a DayMetrics,
    pub spaces_needed_100: i64,
    pub spaces_needed_threshold: i64,
    pub buildout_spaces_100: i64,
    pub buildout_spaces_threshold: i64,
}

impl Analysis {
    pub fn summary<'a>(&'a self, config: &'a CountConfig) -> RunSummary<'a> {
        RunSummary {
            lot_name: &config.lot_name,
            method: self.method,
            capacity: config.capacity,
            threshold: self.threshold,
            d_bounce_ms: config.d_bounce_ms,
            wheelbase_min: config.wheelbase_min,
            wheelbase_max: config
                .wheelbase_max
                .is_finite()
                .then_some(config.wheelbase_max),
            errors: &self.errors,
            ground_truth: &self.ground_truth,
            clamp_counts: &self.corrected.clamp_counts,
            expected_demand: self.expected.as_ref(),
            accounting: self.accounting,
            days: self
                .days
                .iter()
                .map(|m| DaySummary {
                    metrics: m,
                    spaces_needed_100: m.excess_100.current_summary(),
                    spaces_needed_threshold: m.excess_threshold.current_summary(),
                    buildout_spaces_100: m.excess_100.buildout_summary(),
                    buildout_spaces_threshold: m.excess_threshold.buildout_summary(),
                })
                .collect(),
        }
    }
}
