use chrono::NaiveDateTime;

use super::{rank_days, rank_days_over_capacity, DayMetrics, MetricsError, PeakStats};
use crate::ingest::{CountConfig, LaneOrder};

/// Row labels of the per-count report, in order.
pub const REPORT_ROWS: [&str; 11] = [
    "Number of intervals:",
    "Average utilization:",
    "Maximum utilization:",
    "Peak Utilization (average utilization over 100%):",
    "Number of intervals exceeding 100% utilization:",
    "Percentage of intervals over 100% utilization:",
    "Utilization indicator for over 100% utilization:",
    "Number of intervals exceeding the threshold utilization:",
    "Percentage of intervals over the threshold utilization:",
    "Peak Utilization (average utilization over the threshold utilization):",
    "Utilization indicator for over threshold utilization:",
];

/// Parameters printed above the day columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportHeader {
    pub lot_name: String,
    pub capacity: u32,
    pub counter_configuration: String,
    pub channel_configuration: String,
    pub d_bounce_ms: u64,
    pub initial_cars: Option<u32>,
    pub start: NaiveDateTime,
    pub sampling_interval_s: u32,
    pub wheelbase_min: f64,
    pub wheelbase_max: f64,
    pub threshold: f64,
}

impl ReportHeader {
    pub fn from_config(config: &CountConfig) -> Self {
        let l = &config.layout;
        let (x, y) = match l.lane1 {
            LaneOrder::FirstToSecond => (l.first_channel, l.second_channel),
            LaneOrder::SecondToFirst => (l.second_channel, l.first_channel),
        };
        let name = l
            .name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", l.first_channel, l.second_channel));
        ReportHeader {
            lot_name: config.lot_name.clone(),
            capacity: config.capacity,
            counter_configuration: format!(
                "{name} layout with {} feet spacing, Lane 1 {x}-to-{y}, Lane 2 {y}-to-{x}",
                config.spacing_ft()
            ),
            channel_configuration: config
                .channel_description
                .clone()
                .unwrap_or_else(|| "Lane closest to counter (Lane 1) is entrance lane".to_string()),
            d_bounce_ms: config.d_bounce_ms,
            initial_cars: config.initial_observed,
            start: config.start_datetime,
            sampling_interval_s: config.sampling_interval_s,
            wheelbase_min: config.wheelbase_min,
            wheelbase_max: config.wheelbase_max,
            threshold: config.threshold().unwrap_or(1.0),
        }
    }
}

/// A statistic of one level and how it is printed.
type PeakField = (fn(PeakStats) -> f64, fn(f64) -> String);
type PeakBlock = (fn(&DayMetrics) -> PeakStats, [PeakField; 4]);

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn int(v: f64) -> String {
    format!("{}", v.round() as i64)
}

fn feet(v: f64) -> String {
    if v.is_infinite() {
        "none".to_string()
    } else {
        v.to_string()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Renders one count's report as CSV: header block, one column per day plus
/// Mean and Max, and the excess-demand summary for the worst day.
pub fn render_report(header: &ReportHeader, days: &[DayMetrics]) -> Result<String, MetricsError> {
    if days.is_empty() {
        return Err(MetricsError::NoDays);
    }
    let mut rows: Vec<Vec<String>> = vec![
        vec!["Parking lot:".into(), header.lot_name.clone()],
        vec!["Parking capacity:".into(), header.capacity.to_string()],
        vec![
            "Counter configuration:".into(),
            header.counter_configuration.clone(),
        ],
        vec![
            "Channel configuration:".into(),
            header.channel_configuration.clone(),
        ],
        vec![
            "D-Bounce parameter DT (ms):".into(),
            header.d_bounce_ms.to_string(),
        ],
        vec![
            "Initial number of cars:".into(),
            header
                .initial_cars
                .map(|c| c.to_string())
                .unwrap_or_else(|| "not observed".into()),
        ],
        vec![
            "Start date & time:".into(),
            header.start.format("%m/%d/%y %I:%M %p").to_string(),
        ],
        vec![
            "Sampling interval (seconds):".into(),
            header.sampling_interval_s.to_string(),
        ],
        vec!["Minimum wheelbase:".into(), feet(header.wheelbase_min)],
        vec!["Maximum wheelbase:".into(), feet(header.wheelbase_max)],
        vec!["Threshold utilization:".into(), pct(header.threshold)],
    ];

    let mut cols = vec![String::new()];
    cols.extend(days.iter().map(|d| d.date.format("%m/%d/%y").to_string()));
    cols.push("Mean".into());
    cols.push("Max".into());
    rows.push(cols);

    let series_row =
        |label: &str, values: Vec<f64>, fmt: fn(f64) -> String, summary: bool| -> Vec<String> {
            let mut row = vec![label.to_string()];
            row.extend(values.iter().map(|v| fmt(*v)));
            if summary {
                row.push(fmt(mean(&values)));
                row.push(fmt(max(&values)));
            } else {
                row.push(String::new());
                row.push(String::new());
            }
            row
        };
    let collect = |f: &dyn Fn(&DayMetrics) -> f64| days.iter().map(f).collect::<Vec<f64>>();

    rows.push(series_row(
        REPORT_ROWS[0],
        collect(&|d| d.n_intervals as f64),
        int,
        false,
    ));
    rows.push(series_row(
        REPORT_ROWS[1],
        collect(&|d| d.avg_util),
        pct,
        true,
    ));
    rows.push(series_row(
        REPORT_ROWS[2],
        collect(&|d| d.max_util),
        pct,
        true,
    ));
    // The 100% block leads with peak utilization, the threshold block with the count.
    let over_100 = |d: &DayMetrics| d.over_100;
    let over_threshold = |d: &DayMetrics| d.over_threshold;
    let peak = |s: PeakStats| s.peak_util;
    let tau = |s: PeakStats| s.tau as f64;
    let share = |s: PeakStats| s.pct;
    let omega = |s: PeakStats| s.omega_percent();
    let blocks: [PeakBlock; 2] = [
        (
            over_100,
            [(peak, pct), (tau, int), (share, pct), (omega, int)],
        ),
        (
            over_threshold,
            [(tau, int), (share, pct), (peak, pct), (omega, int)],
        ),
    ];
    let mut label = REPORT_ROWS[3..].iter();
    for (stats, fields) in blocks {
        for (field, fmt) in fields {
            let l = label.next().expect("eight peak rows");
            rows.push(series_row(l, collect(&|d| field(stats(d))), fmt, true));
        }
    }

    rows.push(
        [
            "Average Excess Demand Calculations",
            "Current",
            "+Spaces",
            "Buildout",
            "+Spaces",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    let worst_100 = &rank_days_over_capacity(days)[0];
    let worst_thresh = &rank_days(days)[0];
    for (label, e) in [
        ("Peak utilization > 100%:", worst_100.excess_100),
        (
            "Peak utilization > threshold utilization:",
            worst_thresh.excess_threshold,
        ),
    ] {
        rows.push(vec![
            label.to_string(),
            pct(e.current_peak),
            e.current_summary().to_string(),
            pct(e.buildout_peak),
            e.buildout_summary().to_string(),
        ]);
    }

    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8"))
}
