use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, NaiveTime, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::demand::FalsePositiveRule;
use crate::pulse_engine::ChannelLayout;
use crate::Channel;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config field '{field}': {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// A local wall-clock time, written `HH:MM` or `HH:MM:SS` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(pub NaiveTime);

impl TimeOfDay {
    pub fn hms(h: u32, m: u32, s: u32) -> Self {
        TimeOfDay(NaiveTime::from_hms_opt(h, m, s).expect("valid time of day"))
    }
}

impl FromStr for TimeOfDay {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveTime::parse_from_str(s, "%H:%M:%S")
            .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
            .map(TimeOfDay)
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%H:%M:%S"))
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|e| serde::de::Error::custom(format!("invalid time of day '{s}': {e}")))
    }
}

/// Opening and closing time for one weekday; `close` may not precede `open`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenWindow(pub TimeOfDay, pub TimeOfDay);

impl OpenWindow {
    pub fn open(&self) -> NaiveTime {
        self.0 .0
    }

    pub fn close(&self) -> NaiveTime {
        self.1 .0
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        t >= self.open() && t < self.close()
    }
}

/// Business hours per weekday. A missing day means the facility is closed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenHours {
    #[serde(default)]
    pub mon: Option<OpenWindow>,
    #[serde(default)]
    pub tue: Option<OpenWindow>,
    #[serde(default)]
    pub wed: Option<OpenWindow>,
    #[serde(default)]
    pub thu: Option<OpenWindow>,
    #[serde(default)]
    pub fri: Option<OpenWindow>,
    #[serde(default)]
    pub sat: Option<OpenWindow>,
    #[serde(default)]
    pub sun: Option<OpenWindow>,
}

impl OpenHours {
    /// The same window every day of the week.
    pub fn every_day(open: TimeOfDay, close: TimeOfDay) -> Self {
        let w = Some(OpenWindow(open, close));
        OpenHours {
            mon: w,
            tue: w,
            wed: w,
            thu: w,
            fri: w,
            sat: w,
            sun: w,
        }
    }

    pub fn for_weekday(&self, day: Weekday) -> Option<OpenWindow> {
        match day {
            Weekday::Mon => self.mon,
            Weekday::Tue => self.tue,
            Weekday::Wed => self.wed,
            Weekday::Thu => self.thu,
            Weekday::Fri => self.fri,
            Weekday::Sat => self.sat,
            Weekday::Sun => self.sun,
        }
    }

    pub fn is_open(&self, at: NaiveDateTime) -> bool {
        self.for_weekday(at.weekday())
            .is_some_and(|w| w.contains(at.time()))
    }

    fn windows(&self) -> [(&'static str, Option<OpenWindow>); 7] {
        [
            ("open_hours.mon", self.mon),
            ("open_hours.tue", self.tue),
            ("open_hours.wed", self.wed),
            ("open_hours.thu", self.thu),
            ("open_hours.fri", self.fri),
            ("open_hours.sat", self.sat),
            ("open_hours.sun", self.sun),
        ]
    }
}

/// Which traversal order of the layout's two tubes is Lane 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneOrder {
    #[default]
    FirstToSecond,
    SecondToFirst,
}

/// Active tube pair as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub first_channel: Channel,
    pub second_channel: Channel,
    /// Overrides the top-level `tube_spacing_ft`.
    #[serde(default)]
    pub spacing_ft: Option<f64>,
    #[serde(default)]
    pub lane1: LaneOrder,
    /// Free label printed in reports, e.g. the vendor layout name.
    #[serde(default)]
    pub name: Option<String>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            first_channel: Channel::A,
            second_channel: Channel::B,
            spacing_ft: None,
            lane1: LaneOrder::FirstToSecond,
            name: None,
        }
    }
}

fn default_spacing() -> f64 {
    2.0
}

fn default_dead_of_night() -> TimeOfDay {
    TimeOfDay::hms(3, 45, 0)
}

fn default_wheelbase_max() -> f64 {
    f64::INFINITY
}

fn is_unbounded(v: &f64) -> bool {
    v.is_infinite()
}

fn default_interval() -> u32 {
    1
}

mod datetime {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"];

    pub fn parse(s: &str) -> Option<NaiveDateTime> {
        FORMATS
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    }

    pub fn serialize<S: Serializer>(v: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&v.format("%Y-%m-%dT%H:%M:%S"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "invalid date-time '{s}', expected YYYY-MM-DDTHH:MM:SS"
            ))
        })
    }

    pub mod option {
        use chrono::NaiveDateTime;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(
            v: &Option<NaiveDateTime>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<NaiveDateTime>, D::Error> {
            let s = Option::<String>::deserialize(d)?;
            s.map(|s| {
                super::parse(&s)
                    .ok_or_else(|| serde::de::Error::custom(format!("invalid date-time '{s}'")))
            })
            .transpose()
        }
    }
}

/// Lot and measurement parameters for one count.
///
/// Loaded from JSON with unknown keys rejected; call [`CountConfig::validate`]
/// (done by [`load_config`]) before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    pub lot_name: String,
    pub capacity: u32,
    #[serde(default = "default_spacing")]
    pub tube_spacing_ft: f64,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub d_bounce_ms: u64,
    #[serde(default)]
    pub wheelbase_min: f64,
    #[serde(
        default = "default_wheelbase_max",
        skip_serializing_if = "is_unbounded"
    )]
    pub wheelbase_max: f64,
    /// Drop unknown (zero) wheelbases when filtering.
    #[serde(default)]
    pub exclude_unknown_wheelbase: bool,
    #[serde(default = "default_interval")]
    pub sampling_interval_s: u32,
    #[serde(with = "datetime")]
    pub start_datetime: NaiveDateTime,
    /// Extends the demand series past the last record.
    #[serde(
        default,
        with = "datetime::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub end_datetime: Option<NaiveDateTime>,
    #[serde(default)]
    pub initial_observed: Option<u32>,
    #[serde(default)]
    pub final_observed: Option<u32>,
    /// Ground truth at every day boundary, overriding inferred floors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daily_ground_truth: Option<Vec<i64>>,
    #[serde(default)]
    pub open_hours: OpenHours,
    #[serde(default = "default_dead_of_night")]
    pub dead_of_night: TimeOfDay,
    #[serde(default)]
    pub threshold_ratio: Option<f64>,
    #[serde(default)]
    pub households: Option<u32>,
    #[serde(default)]
    pub platted_lots: Option<u32>,
    #[serde(default)]
    pub inverted_counters: Vec<String>,
    #[serde(default)]
    pub pairing_window_ms: Option<u64>,
    #[serde(default)]
    pub grouping_max_wheelbase_ft: Option<f64>,
    #[serde(default)]
    pub false_positive_rule: Option<FalsePositiveRule>,
    #[serde(default)]
    pub channel_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_grid: Option<Vec<(f64, f64)>>,
}

impl CountConfig {
    /// A minimal configuration, mostly for tests and synthetic runs.
    pub fn new(lot_name: impl Into<String>, capacity: u32, start: NaiveDateTime) -> Self {
        CountConfig {
            lot_name: lot_name.into(),
            capacity,
            tube_spacing_ft: default_spacing(),
            layout: LayoutConfig::default(),
            d_bounce_ms: 0,
            wheelbase_min: 0.0,
            wheelbase_max: f64::INFINITY,
            exclude_unknown_wheelbase: false,
            sampling_interval_s: 1,
            start_datetime: start,
            end_datetime: None,
            initial_observed: None,
            final_observed: None,
            daily_ground_truth: None,
            open_hours: OpenHours::default(),
            dead_of_night: default_dead_of_night(),
            threshold_ratio: Some(1.0),
            households: None,
            platted_lots: None,
            inverted_counters: Vec::new(),
            pairing_window_ms: None,
            grouping_max_wheelbase_ft: None,
            false_positive_rule: None,
            channel_description: None,
            d_grid: None,
            w_grid: None,
        }
    }

    /// Threshold utilization U0: explicit ratio, else households over platted lots.
    pub fn threshold(&self) -> Result<f64, ConfigError> {
        if let Some(r) = self.threshold_ratio {
            return Ok(r);
        }
        match (self.households, self.platted_lots) {
            (Some(h), Some(p)) if p > 0 => Ok(h as f64 / p as f64),
            (Some(_), Some(_)) => Err(invalid("platted_lots", "must be positive")),
            _ => Err(invalid(
                "threshold_ratio",
                "either threshold_ratio or both households and platted_lots are required",
            )),
        }
    }

    pub fn spacing_ft(&self) -> f64 {
        self.layout.spacing_ft.unwrap_or(self.tube_spacing_ft)
    }

    pub fn channel_layout(&self) -> ChannelLayout {
        ChannelLayout {
            first_channel: self.layout.first_channel,
            second_channel: self.layout.second_channel,
            spacing_ft: self.spacing_ft(),
            lane1: self.layout.lane1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.capacity < 1 {
            return Err(invalid("capacity", "must be at least 1"));
        }
        if self.sampling_interval_s < 1 {
            return Err(invalid("sampling_interval_s", "must be at least 1"));
        }
        if !(self.tube_spacing_ft > 0.0 && self.tube_spacing_ft.is_finite()) {
            return Err(invalid("tube_spacing_ft", "must be positive"));
        }
        if let Some(s) = self.layout.spacing_ft {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("layout.spacing_ft", "must be positive"));
            }
        }
        if self.layout.first_channel == self.layout.second_channel {
            return Err(invalid(
                "layout",
                "first_channel and second_channel must differ",
            ));
        }
        if !(self.wheelbase_min >= 0.0) {
            return Err(invalid("wheelbase_min", "must be non-negative"));
        }
        if !(self.wheelbase_min <= self.wheelbase_max) {
            return Err(invalid("wheelbase_max", "must not be below wheelbase_min"));
        }
        if let Some(r) = self.threshold_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid("threshold_ratio", "must be in (0, 1]"));
            }
        }
        let u0 = self.threshold()?;
        if !(u0 > 0.0 && u0 <= 1.0) {
            return Err(invalid(
                "households",
                "households / platted_lots must be in (0, 1]",
            ));
        }
        if let Some(end) = self.end_datetime {
            if end < self.start_datetime {
                return Err(invalid("end_datetime", "precedes start_datetime"));
            }
        }
        for (field, w) in self.open_hours.windows() {
            if let Some(w) = w {
                if w.close() < w.open() {
                    return Err(invalid(field, "close precedes open"));
                }
            }
        }
        if let Some(g) = self.grouping_max_wheelbase_ft {
            if !(g > 0.0) {
                return Err(invalid("grouping_max_wheelbase_ft", "must be positive"));
            }
        }
        if self.pairing_window_ms == Some(0) {
            return Err(invalid("pairing_window_ms", "must be positive"));
        }
        if let Some(rule) = &self.false_positive_rule {
            rule.validate()
                .map_err(|r| invalid("false_positive_rule", r))?;
        }
        if let Some(grid) = &self.d_grid {
            if grid.is_empty() {
                return Err(invalid("d_grid", "must not be empty"));
            }
        }
        if let Some(grid) = &self.w_grid {
            if grid.is_empty() {
                return Err(invalid("w_grid", "must not be empty"));
            }
            if grid.iter().any(|(lo, hi)| !(*lo >= 0.0 && lo <= hi)) {
                return Err(invalid("w_grid", "each range needs 0 <= min <= max"));
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSON config document.
pub fn parse_config(json: &str) -> Result<CountConfig, ConfigError> {
    let mut cfg: CountConfig = serde_json::from_str(json)?;
    cfg.validate()?;
    if cfg.threshold_ratio.is_none() {
        cfg.threshold_ratio = Some(cfg.threshold()?);
    }
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<CountConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
