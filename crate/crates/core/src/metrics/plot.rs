use std::fmt::Write as _;

use chrono::{Duration, NaiveDateTime, Timelike};

use super::DayMetrics;

const MAX_POINTS: usize = 4000;
const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

/// One day's open-hours utilization with its reference levels.
#[derive(Debug, Clone, Copy)]
pub struct PlotData<'a> {
    /// Time of the first sample in `util`.
    pub first: NaiveDateTime,
    pub interval_s: u32,
    pub util: &'a [f64],
    pub threshold: f64,
    pub day: &'a DayMetrics,
}

impl PlotData<'_> {
    fn time_at(&self, i: usize) -> NaiveDateTime {
        self.first + Duration::seconds(i as i64 * self.interval_s as i64)
    }
}

/// Per-sample CSV with the utilization and the horizontal reference lines.
pub fn plot_csv(data: &PlotData) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "time",
        "utilization_pct",
        "threshold_pct",
        "full_pct",
        "day_average_pct",
        "peak_over_100_pct",
        "peak_over_threshold_pct",
    ])
    .expect("writing to memory");
    let fixed = [
        data.threshold,
        1.0,
        data.day.avg_util,
        data.day.over_100.peak_util,
        data.day.over_threshold.peak_util,
    ]
    .map(|v| format!("{:.3}", v * 100.0));
    for (i, u) in data.util.iter().enumerate() {
        let mut row = vec![
            data.time_at(i).format("%Y-%m-%d %H:%M:%S").to_string(),
            format!("{:.3}", u * 100.0),
        ];
        row.extend(fixed.iter().cloned());
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

// Keeps each bucket's min and max so spikes survive downsampling.
fn downsample(util: &[f64]) -> Vec<(usize, f64)> {
    if util.len() <= MAX_POINTS {
        return util.iter().copied().enumerate().collect();
    }
    let bucket = util.len().div_ceil(MAX_POINTS / 2);
    let mut out = Vec::with_capacity(MAX_POINTS);
    for (b, chunk) in util.chunks(bucket).enumerate() {
        let base = b * bucket;
        let (imin, vmin) =
            chunk.iter().enumerate().fold(
                (0, f64::INFINITY),
                |a, (i, v)| if *v < a.1 { (i, *v) } else { a },
            );
        let (imax, vmax) = chunk
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |a, (i, v)| if *v > a.1 { (i, *v) } else { a },
            );
        let mut pair = [(base + imin, vmin), (base + imax, vmax)];
        pair.sort_by_key(|p| p.0);
        out.extend(pair);
    }
    out.dedup_by_key(|p| p.0);
    out
}

/// Line chart of one day's utilization with lines at the threshold, at 100%
/// and at the day average.
pub fn plot_svg(data: &PlotData) -> String {
    let n = data.util.len().max(2);
    let top = data.util.iter().copied().fold(1.0f64, f64::max);
    let y_max = ((top * 10.0).ceil() / 10.0).max(1.1);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |i: usize| MARGIN_L + plot_w * i as f64 / (n - 1) as f64;
    let y = |u: f64| MARGIN_T + plot_h * (1.0 - u / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">Utilization {}</text>"#,
        WIDTH / 2.0,
        data.day.date.format("%a %m/%d/%y")
    );

    let mut tick = 0.0;
    while tick <= y_max + 1e-9 {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}%</text>"##,
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0,
            ty + 4.0,
            tick * 100.0
        );
        tick += 0.2;
    }
    for i in 0..data.util.len() {
        let t = data.time_at(i);
        if t.minute() == 0 && t.second() == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x(i),
                HEIGHT - MARGIN_B + 18.0,
                t.format("%H:%M")
            );
        }
    }

    let mut points = String::new();
    for (i, u) in downsample(data.util) {
        let _ = write!(points, "{:.2},{:.2} ", x(i), y(u));
    }
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{}"/>"##,
        points.trim_end()
    );

    let lines = [
        (
            data.threshold,
            "#7a3ea1",
            format!("U0 {:.1}%", data.threshold * 100.0),
        ),
        (1.0, "#c62828", "100%".to_string()),
        (
            data.day.avg_util,
            "#2e7d32",
            format!("average {:.1}%", data.day.avg_util * 100.0),
        ),
    ];
    for (level, color, label) in lines {
        let ly = y(level);
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN_L}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-dasharray="6 3"/><text x="{:.2}" y="{:.2}" text-anchor="end" fill="{color}">{label}</text>"#,
            WIDTH - MARGIN_R,
            WIDTH - MARGIN_R - 4.0,
            ly - 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::day_metrics;
    use chrono::NaiveDate;

    fn sample() -> (Vec<f64>, DayMetrics) {
        let util: Vec<f64> = (0..7200).map(|i| (i as f64 / 7200.0) * 1.2).collect();
        let date = NaiveDate::from_ymd_opt(2025, 1, 13).unwrap();
        let m = day_metrics(&util, 0..util.len(), 0.854, 232, date).unwrap();
        (util, m)
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let (util, m) = sample();
        let data = PlotData {
            first: m.date.and_hms_opt(7, 0, 0).unwrap(),
            interval_s: 1,
            util: &util,
            threshold: 0.854,
            day: &m,
        };
        let csv = plot_csv(&data);
        assert_eq!(csv.lines().count(), util.len() + 1);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("2025-01-13 07:00:00,0.000,85.400,100.000,"));
    }

    #[test]
    fn svg_is_downsampled_and_has_reference_lines() {
        let (util, m) = sample();
        let data = PlotData {
            first: m.date.and_hms_opt(7, 0, 0).unwrap(),
            interval_s: 1,
            util: &util,
            threshold: 0.854,
            day: &m,
        };
        let svg = plot_svg(&data);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("U0 85.4%"));
        assert!(svg.contains(">100%<"));
        assert!(svg.contains("08:00"));
        let pts = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert!(pts.split(' ').count() <= MAX_POINTS);
    }

    #[test]
    fn downsample_keeps_extremes() {
        let mut util = vec![0.5; 10_000];
        util[4321] = 1.7;
        util[9000] = 0.0;
        let d = downsample(&util);
        assert!(d.len() <= MAX_POINTS);
        assert!(d.contains(&(4321, 1.7)));
        assert!(d.contains(&(9000, 0.0)));
    }
}
