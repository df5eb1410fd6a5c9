//! Exhaustive search over dead time and wheelbase range.
//!
//! The objective is the absolute end-of-count error against either the
//! observed final occupancy or the expected demand inferred from overnight
//! traffic. It is integer valued and piecewise constant in both knobs, so the
//! grid is evaluated exhaustively and ties are broken towards the least
//! aggressive filter: smallest dead time, then widest wheelbase range.

use std::cmp::Ordering;

use chrono::NaiveDateTime;
use serde::Serialize;

use crate::correction::{
    augmented_daily_errors, augmented_full_days, build_expected_demand, CorrectionError,
};
use crate::demand::{
    accumulate, flag_false_positives, merge_counts, wheelbase_passes, DemandError,
};
use crate::ingest::{CountConfig, VehicleRecord};
use crate::par::{self, Execution};
use crate::pulse_engine::{detect_with, DetectError, PairingParams, Pulse};
use crate::Direction;

/// Default dead-time grid: 0 to 500 ms in 50 ms steps.
pub fn default_d_grid() -> Vec<u64> {
    (0..=10).map(|i| i * 50).collect()
}

/// Default wheelbase grid: minimum in {0, 1, 2} ft, maximum in {10, 12, 14} ft.
pub fn default_w_grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for lo in [0.0, 1.0, 2.0] {
        for hi in [10.0, 12.0, 14.0] {
            out.push((lo, hi));
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("tuning target unavailable: {0}")]
    TargetUnavailable(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

/// One counter's raw input.
#[derive(Debug, Clone)]
pub enum CounterInput {
    Pulses {
        counter_id: String,
        pulses: Vec<Pulse>,
    },
    Records {
        counter_id: String,
        records: Vec<VehicleRecord>,
    },
}

impl CounterInput {
    pub fn counter_id(&self) -> &str {
        match self {
            CounterInput::Pulses { counter_id, .. } | CounterInput::Records { counter_id, .. } => {
                counter_id
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Observed occupancy at the end of the count.
    Observed,
    /// Expected demand at the last overnight anchor.
    Expected,
}

#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub d_grid: Vec<u64>,
    pub w_grid: Vec<(f64, f64)>,
    pub target: Target,
    pub early_stop: bool,
    pub execution: Execution,
}

impl TuneOptions {
    pub fn new(target: Target) -> Self {
        TuneOptions {
            d_grid: default_d_grid(),
            w_grid: default_w_grid(),
            target,
            early_stop: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub d_ms: u64,
    pub w_min: f64,
    pub w_max: f64,
    /// `None` when the target could not be formed for this candidate.
    pub residual: Option<u64>,
    pub end_demand: Option<i64>,
    pub target: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningResult {
    pub best_d_ms: u64,
    pub best_w: (f64, f64),
    pub residual: u64,
    /// Evaluated candidates in preference order.
    pub evaluations: Vec<Evaluation>,
    /// Set when dead time was emulated on worksheet records.
    pub approximate_dead_time: bool,
}

/// Preference order: smaller d, wider range, smaller minimum, larger maximum.
fn preference(a: &(u64, (f64, f64)), b: &(u64, (f64, f64))) -> Ordering {
    let width = |w: (f64, f64)| w.1 - w.0;
    a.0.cmp(&b.0)
        .then(width(b.1).total_cmp(&width(a.1)))
        .then(a.1 .0.total_cmp(&b.1 .0))
        .then(b.1 .1.total_cmp(&a.1 .1))
}

/// Drops a record when it follows the previous kept record of the same
/// counter and direction by less than `d_ms`. Worksheet timestamps have
/// one-second resolution, so this only approximates pulse dead time.
pub fn approximate_dead_time(records: &[VehicleRecord], d_ms: u64) -> Vec<VehicleRecord> {
    let mut last: Vec<(&str, Direction, NaiveDateTime)> = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let slot = last
            .iter_mut()
            .find(|(c, d, _)| *c == r.counter_id && *d == r.direction);
        let keep = match &slot {
            Some((_, _, t)) => (r.timestamp - *t).num_milliseconds() >= d_ms as i64,
            None => true,
        };
        if keep {
            match slot {
                Some(s) => s.2 = r.timestamp,
                None => last.push((&r.counter_id, r.direction, r.timestamp)),
            }
            out.push(r.clone());
        }
    }
    out
}

/// Merged records for one dead time, before wheelbase filtering.
pub fn records_for_dead_time(
    inputs: &[CounterInput],
    config: &CountConfig,
    d_ms: u64,
) -> Result<Vec<VehicleRecord>, DetectError> {
    let layout = config.channel_layout();
    let params = PairingParams::from_config(config, &layout);
    let mut sets = Vec::with_capacity(inputs.len());
    for input in inputs {
        match input {
            CounterInput::Pulses { counter_id, pulses } => {
                let det = detect_with(
                    pulses,
                    &layout,
                    &params,
                    d_ms,
                    config.start_datetime,
                    counter_id,
                )?;
                sets.push(det.records);
            }
            CounterInput::Records { records, .. } => {
                let mut sorted = records.clone();
                sorted.sort_by_key(|r| r.timestamp);
                sets.push(approximate_dead_time(&sorted, d_ms));
            }
        }
    }
    Ok(merge_counts(&sets))
}

/// The records one (d, w) candidate feeds into demand accumulation.
pub fn candidate_records(
    merged: &[VehicleRecord],
    config: &CountConfig,
    w: (f64, f64),
) -> Vec<VehicleRecord> {
    let filtered: Vec<VehicleRecord> = merged
        .iter()
        .filter(|r| wheelbase_passes(r, w.0, w.1, config.exclude_unknown_wheelbase))
        .cloned()
        .collect();
    match &config.false_positive_rule {
        Some(rule) => flag_false_positives(&filtered, rule).0,
        None => filtered,
    }
}

/// Latest instant covered by the raw inputs, so every candidate shares one
/// series length.
pub fn input_end(inputs: &[CounterInput], config: &CountConfig) -> NaiveDateTime {
    let mut end = config.end_datetime.unwrap_or(config.start_datetime);
    for input in inputs {
        let last = match input {
            CounterInput::Pulses { pulses, .. } => pulses
                .iter()
                .map(|p| {
                    config.start_datetime + chrono::Duration::milliseconds(p.timestamp_ms as i64)
                })
                .max(),
            CounterInput::Records { records, .. } => records.iter().map(|r| r.timestamp).max(),
        };
        if let Some(t) = last {
            end = end.max(t);
        }
    }
    end
}

/// End demand and target value for one candidate's records.
pub fn objective(
    records: &[VehicleRecord],
    config: &CountConfig,
    end: NaiveDateTime,
    target: Target,
) -> Result<Option<(i64, i64)>, DemandError> {
    let initial = config.initial_observed.unwrap_or(0) as i64;
    let series = accumulate(
        records,
        config.start_datetime,
        config.sampling_interval_s,
        initial,
        Some(end),
    )?;
    match target {
        Target::Observed => {
            let observed = config.final_observed.unwrap_or(0) as i64;
            Ok(Some((series.final_value(), observed)))
        }
        Target::Expected => {
            let Some(t0) = crate::correction::find_anchor(
                records,
                config.start_datetime,
                config.dead_of_night.0,
            ) else {
                return Ok(None);
            };
            let m = augmented_full_days(&series, t0);
            let ed = match build_expected_demand(
                records,
                config.start_datetime,
                config.sampling_interval_s,
                config.dead_of_night.0,
                &config.open_hours,
                m,
            ) {
                Ok(ed) => ed,
                Err(CorrectionError::AnchorUnavailable) => return Ok(None),
                Err(e) => unreachable!("expected demand construction: {e}"),
            };
            match augmented_daily_errors(&series, &ed) {
                Ok((re, _)) => {
                    let last = *re.day_boundaries.last().expect("at least the anchor");
                    Ok(Some((re.values[last], *ed.values.last().expect("ED(t0)"))))
                }
                Err(_) => Ok(None),
            }
        }
    }
}

/// Grid search over `options.d_grid` x `options.w_grid`.
///
/// With pulse inputs each dead time re-runs detection; with worksheet inputs
/// dead time is emulated by [`approximate_dead_time`]. The selected
/// candidate does not depend on grid order or execution mode.
pub fn tune(
    inputs: &[CounterInput],
    config: &CountConfig,
    options: &TuneOptions,
) -> Result<TuningResult, TuneError> {
    if options.d_grid.is_empty() {
        return Err(TuneError::EmptyGrid("dead-time"));
    }
    if options.w_grid.is_empty() {
        return Err(TuneError::EmptyGrid("wheelbase"));
    }
    if options.target == Target::Observed && config.final_observed.is_none() {
        return Err(TuneError::TargetUnavailable(
            "final_observed is not set".into(),
        ));
    }
    let approximate = inputs
        .iter()
        .any(|i| matches!(i, CounterInput::Records { .. }));
    let end = input_end(inputs, config);

    let mut d_grid = options.d_grid.clone();
    d_grid.sort_unstable();
    d_grid.dedup();
    let mut candidates: Vec<(u64, (f64, f64))> = d_grid
        .iter()
        .flat_map(|d| options.w_grid.iter().map(move |w| (*d, *w)))
        .collect();
    candidates.sort_by(preference);
    candidates.dedup_by(|a, b| preference(a, b) == Ordering::Equal);

    let evaluate =
        |merged: &[VehicleRecord], d: u64, w: (f64, f64)| -> Result<Evaluation, DemandError> {
            let recs = candidate_records(merged, config, w);
            let obj = objective(&recs, config, end, options.target)?;
            Ok(Evaluation {
                d_ms: d,
                w_min: w.0,
                w_max: w.1,
                residual: obj.map(|(e, t)| e.abs_diff(t)),
                end_demand: obj.map(|o| o.0),
                target: obj.map(|o| o.1),
            })
        };

    let evaluations: Vec<Evaluation> = if options.early_stop {
        let mut out = Vec::new();
        let mut cached: Option<(u64, Vec<VehicleRecord>)> = None;
        for (d, w) in &candidates {
            if cached.as_ref().map(|c| c.0) != Some(*d) {
                cached = Some((*d, records_for_dead_time(inputs, config, *d)?));
            }
            let merged = &cached.as_ref().expect("filled above").1;
            let ev = evaluate(merged, *d, *w)?;
            let done = ev.residual == Some(0);
            out.push(ev);
            if done {
                break;
            }
        }
        out
    } else {
        let per_d: Vec<Result<Vec<VehicleRecord>, DetectError>> =
            par::map(&d_grid, options.execution, |d| {
                records_for_dead_time(inputs, config, *d)
            });
        let per_d: Vec<Vec<VehicleRecord>> = per_d.into_iter().collect::<Result<_, _>>()?;
        let results = par::map(&candidates, options.execution, |(d, w)| {
            let idx = d_grid
                .binary_search(d)
                .expect("candidate d comes from the grid");
            evaluate(&per_d[idx], *d, *w)
        });
        results.into_iter().collect::<Result<_, _>>()?
    };

    // Evaluations are in preference order, so the first minimum wins ties.
    let best = evaluations
        .iter()
        .filter_map(|e| e.residual.map(|r| (r, e)))
        .min_by_key(|(r, _)| *r)
        .map(|(_, e)| *e)
        .ok_or_else(|| {
            TuneError::TargetUnavailable("no candidate produced an expected-demand anchor".into())
        })?;

    Ok(TuningResult {
        best_d_ms: best.d_ms,
        best_w: (best.w_min, best.w_max),
        residual: best.residual.expect("filtered above"),
        evaluations,
        approximate_dead_time: approximate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse_engine::Pulse;
    use crate::Channel;
    use chrono::NaiveDate;

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 1, 13)
            .unwrap()
            .and_hms_opt(8, 0, 0)
            .unwrap()
    }

    /// Enter crossings at 20 ft/s with a 10 ft wheelbase, each pulse echoed
    /// 50 ms later.
    fn echoed_enters(n: u64) -> Vec<Pulse> {
        let mut out = Vec::new();
        for i in 0..n {
            let t = 10_000 + i * 20_000;
            for (ch, off) in [
                (Channel::A, 0),
                (Channel::B, 100),
                (Channel::A, 500),
                (Channel::B, 600),
            ] {
                out.push(Pulse::new(ch, t + off));
                out.push(Pulse::new(ch, t + off + 50));
            }
        }
        out.sort();
        out
    }

    fn config() -> CountConfig {
        let mut c = CountConfig::new("test", 50, start());
        c.initial_observed = Some(0);
        c.final_observed = Some(3);
        c
    }

    #[test]
    fn echo_removed_by_smallest_sufficient_dead_time() {
        let inputs = [CounterInput::Pulses {
            counter_id: "c1".into(),
            pulses: echoed_enters(3),
        }];
        let mut opts = TuneOptions::new(Target::Observed);
        opts.d_grid = vec![260, 0, 100];
        opts.w_grid = vec![(0.0, f64::INFINITY)];
        let res = tune(&inputs, &config(), &opts).unwrap();
        assert_eq!(res.best_d_ms, 100);
        assert_eq!(res.residual, 0);
        let at = |d| {
            res.evaluations
                .iter()
                .find(|e| e.d_ms == d)
                .unwrap()
                .residual
                .unwrap()
        };
        assert!(at(0) > 0);
        assert_eq!(at(100), 0);
        assert_eq!(at(260), 0);
        assert!(!res.approximate_dead_time);
    }

    #[test]
    fn perfect_records_have_zero_residual() {
        let recs: Vec<_> = (0..3)
            .map(|i| {
                VehicleRecord::new(
                    start() + chrono::Duration::minutes(i),
                    Direction::Enter,
                    "c1",
                )
                .with_wheelbase(9.0)
            })
            .collect();
        let inputs = [CounterInput::Records {
            counter_id: "c1".into(),
            records: recs,
        }];
        let res = tune(&inputs, &config(), &TuneOptions::new(Target::Observed)).unwrap();
        assert_eq!(res.residual, 0);
        assert_eq!(res.best_d_ms, 0);
        assert_eq!(res.best_w, (0.0, 14.0));
        assert!(res.approximate_dead_time);
    }

    #[test]
    fn errors_on_empty_grid_and_missing_target() {
        let inputs = [CounterInput::Pulses {
            counter_id: "c1".into(),
            pulses: vec![],
        }];
        let mut opts = TuneOptions::new(Target::Observed);
        opts.d_grid.clear();
        assert!(matches!(
            tune(&inputs, &config(), &opts),
            Err(TuneError::EmptyGrid(_))
        ));
        let mut cfg = config();
        cfg.final_observed = None;
        assert!(matches!(
            tune(&inputs, &cfg, &TuneOptions::new(Target::Observed)),
            Err(TuneError::TargetUnavailable(_))
        ));
        assert!(matches!(
            tune(&inputs, &config(), &TuneOptions::new(Target::Expected)),
            Err(TuneError::TargetUnavailable(_))
        ));
    }

    #[test]
    fn early_stop_selects_the_same_candidate() {
        let inputs = [CounterInput::Pulses {
            counter_id: "c1".into(),
            pulses: echoed_enters(4),
        }];
        let mut cfg = config();
        cfg.final_observed = Some(4);
        let full = tune(&inputs, &cfg, &TuneOptions::new(Target::Observed)).unwrap();
        let mut opts = TuneOptions::new(Target::Observed);
        opts.early_stop = true;
        let early = tune(&inputs, &cfg, &opts).unwrap();
        assert_eq!(
            (full.best_d_ms, full.best_w, full.residual),
            (early.best_d_ms, early.best_w, early.residual)
        );
        assert!(early.evaluations.len() < full.evaluations.len());
        let mut seq = TuneOptions::new(Target::Observed);
        seq.execution = Execution::Sequential;
        assert_eq!(tune(&inputs, &cfg, &seq).unwrap(), full);
    }

    #[test]
    fn approximate_dead_time_drops_same_second_duplicates() {
        let t = start();
        let recs = vec![
            VehicleRecord::new(t, Direction::Enter, "c1"),
            VehicleRecord::new(t, Direction::Enter, "c1"),
            VehicleRecord::new(t, Direction::Exit, "c1"),
            VehicleRecord::new(t + chrono::Duration::seconds(1), Direction::Enter, "c1"),
        ];
        assert_eq!(approximate_dead_time(&recs, 0).len(), 4);
        assert_eq!(approximate_dead_time(&recs, 260).len(), 3);
        assert_eq!(approximate_dead_time(&recs, 2000).len(), 2);
    }
}
