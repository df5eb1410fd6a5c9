//! Parking demand analytics for pneumatic road-tube traffic counters.
//!
//! The crate turns either raw per-channel air-switch pulses or counter-exported
//! per-vehicle worksheets into a sampled parking-demand series, removes the
//! cumulative counting drift day by day, and summarizes each day with
//! utilization metrics suitable for capacity planning.
//!
//! Pipeline stages map onto modules:
//!
//! * [`ingest`]: worksheet CSV, pulse-log CSV and JSON run configuration.
//! * [`pulse_engine`]: dead-time filtering, tube pairing, speed/wheelbase.
//! * [`demand`]: counter merge, wheelbase and false-positive filters, demand accumulation.
//! * [`correction`]: daily error vectors, phantom adjustments, dead-of-night floors.
//! * [`tuner`]: exhaustive (dead time, wheelbase range) search.
//! * [`metrics`]: utilization, peak statistics, report and plot emitters.
//! * [`synth`]: seeded synthetic traffic used as a verification oracle.
//! * [`pipeline`]: the stages above composed into one analysis with an audit trail.
//!
//! With the default `parallel` feature, grid evaluation and batch work run on
//! rayon; without it every entry point falls back to sequential iteration and
//! produces identical results.

// `!(x >= 0.0)` style checks are used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correction;
pub mod demand;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod pulse_engine;
pub mod synth;
pub mod tuner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use correction::{CorrectionError, DailyErrorVector, ExpectedDemandVector};
pub use demand::{DemandError, DemandSeries, FalsePositiveRule};
pub use ingest::{ConfigError, CountConfig, ParseError, VehicleRecord};
pub use metrics::{DayMetrics, MetricsError};
pub use pulse_engine::{ChannelLayout, DetectError, Pulse, Traversal};
pub use tuner::{TuneError, TuningResult};

/// Feet per second in one mile per hour, fixed for reproducible output.
pub const FPS_PER_MPH: f64 = 1.46667;

/// Travel direction relative to the parking lot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Enter,
    Exit,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Enter => Direction::Exit,
            Direction::Exit => Direction::Enter,
        }
    }

    /// Signed contribution to lot occupancy.
    pub fn delta(self) -> i64 {
        match self {
            Direction::Enter => 1,
            Direction::Exit => -1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Enter => f.write_str("enter"),
            Direction::Exit => f.write_str("exit"),
        }
    }
}

/// Counter input port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
    C,
    D,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::A, Channel::B, Channel::C, Channel::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Channel::A => 'A',
            Channel::B => 'B',
            Channel::C => 'C',
            Channel::D => 'D',
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel '{0}' (expected A, B, C or D)")]
pub struct UnknownChannel(pub String);

impl FromStr for Channel {
    type Err = UnknownChannel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Channel::A),
            "B" | "b" => Ok(Channel::B),
            "C" | "c" => Ok(Channel::C),
            "D" | "d" => Ok(Channel::D),
            other => Err(UnknownChannel(other.to_string())),
        }
    }
}

/// Any error the pipeline can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
