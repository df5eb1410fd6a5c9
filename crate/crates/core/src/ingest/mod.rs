//! Parsers for counter exports, raw pulse logs and run configuration.

mod config;
mod pulse_log;
mod worksheet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::Direction;

pub use config::{
    load_config, parse_config, ConfigError, CountConfig, LaneOrder, LayoutConfig, OpenHours,
    OpenWindow, TimeOfDay,
};
pub use pulse_log::{parse_pulse_log, write_pulse_log};
pub use worksheet::{parse_vehicle_worksheet, parse_worksheet_with, write_vehicle_worksheet};

/// One detected vehicle, as exported by the counter software or produced by
/// [`crate::pulse_engine::detect_vehicles`].
///
/// `speed_mph` and `wheelbase_ft` use 0 for "unknown".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub timestamp: NaiveDateTime,
    pub direction: Direction,
    pub speed_mph: f64,
    pub wheelbase_ft: f64,
    pub gap_ft: Option<f64>,
    pub headway_s: Option<f64>,
    pub vehicle_class: Option<u8>,
    pub counter_id: String,
}

impl VehicleRecord {
    /// A record with unknown speed and wheelbase and no optional columns.
    pub fn new(
        timestamp: NaiveDateTime,
        direction: Direction,
        counter_id: impl Into<String>,
    ) -> Self {
        Self {
            timestamp,
            direction,
            speed_mph: 0.0,
            wheelbase_ft: 0.0,
            gap_ft: None,
            headway_s: None,
            vehicle_class: None,
            counter_id: counter_id.into(),
        }
    }

    pub fn with_wheelbase(mut self, wheelbase_ft: f64) -> Self {
        self.wheelbase_ft = wheelbase_ft;
        self
    }

    pub fn with_speed(mut self, speed_mph: f64) -> Self {
        self.speed_mph = speed_mph;
        self
    }

    pub fn has_known_wheelbase(&self) -> bool {
        self.wheelbase_ft > 0.0
    }
}

/// Input rejected by one of the CSV parsers. Every variant carries the
/// 1-based line number of the offending row (the header is line 1).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: u64,
    pub message: String,
}

impl ParseError {
    pub(crate) fn at(line: u64, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn from_csv(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        Self::at(line, err.to_string())
    }
}
