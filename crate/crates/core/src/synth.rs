//! Seeded synthetic traffic: ground-truth vehicles, their occupancy, and the
//! raw pulses a tube counter would have recorded.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, so output is bit-identical for a given seed on every
//! platform. Scenario generation and pulse emission use independent streams.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::ingest::{LaneOrder, VehicleRecord};
use crate::par::{self, Execution};
use crate::pulse_engine::{ChannelLayout, Pulse};
use crate::{Channel, Direction, FPS_PER_MPH};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Enter rate in effect from `from_s` until the next segment starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub from_s: u64,
    pub enters_per_hour: f64,
}

/// Truncated exponential dwell time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellSpec {
    pub mean_s: f64,
    #[serde(default)]
    pub min_s: f64,
    pub max_s: f64,
}

impl DwellSpec {
    /// Inverse CDF of the exponential restricted to `[min_s, max_s]`.
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let span = self.max_s - self.min_s;
        let u: f64 = rng.random();
        self.min_s - self.mean_s * (1.0 - u * (1.0 - (-span / self.mean_s).exp())).ln()
    }
}

/// Tubes in the order an entering vehicle crosses them, uniformly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeArray {
    pub channels: Vec<Channel>,
    pub spacing_ft: f64,
}

impl TubeArray {
    pub fn new(channels: Vec<Channel>, spacing_ft: f64) -> Self {
        Self {
            channels,
            spacing_ft,
        }
    }

    /// The two tubes of `layout`, ordered so that entering matches its lane 1.
    pub fn from_layout(layout: &ChannelLayout) -> Self {
        let channels = match layout.lane1 {
            LaneOrder::FirstToSecond => vec![layout.first_channel, layout.second_channel],
            LaneOrder::SecondToFirst => vec![layout.second_channel, layout.first_channel],
        };
        Self {
            channels,
            spacing_ft: layout.spacing_ft,
        }
    }

    pub fn length_ft(&self) -> f64 {
        self.spacing_ft * self.channels.len().saturating_sub(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeFailure {
    pub channel: Channel,
    pub fail_time_ms: u64,
}

/// Probability and delay range (ms, inclusive) of one noise process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    pub prob: f64,
    pub delay_ms: (u64, u64),
}

impl NoiseProcess {
    fn fires(&self, rng: &mut impl Rng) -> Option<u64> {
        if self.prob <= 0.0 {
            return None;
        }
        if rng.random::<f64>() < self.prob {
            Some(rng.random_range(self.delay_ms.0..=self.delay_ms.1))
        } else {
            None
        }
    }

    fn validate(&self, field: &'static str) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(invalid(
                field,
                format!("probability {} outside [0, 1]", self.prob),
            ));
        }
        if self.delay_ms.0 > self.delay_ms.1 {
            return Err(invalid(field, "delay range is reversed"));
        }
        Ok(())
    }
}

/// Counter noise. All processes default to off.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Extra pulse on the same channel shortly after a true pulse.
    pub reverberation: Option<NoiseProcess>,
    /// Second tire of an axle hitting a tube late: every pulse of the crossing doubled.
    pub angled_crossing: Option<NoiseProcess>,
    /// Phantom opposite-direction crossing overlapping a true one.
    pub crosstalk: Option<NoiseProcess>,
    pub tube_failure: Option<TubeFailure>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (field, p) in [
            ("noise.reverberation", self.reverberation),
            ("noise.angled_crossing", self.angled_crossing),
            ("noise.crosstalk", self.crosstalk),
        ] {
            if let Some(p) = p {
                p.validate(field)?;
            }
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        [self.reverberation, self.angled_crossing, self.crosstalk]
            .iter()
            .all(|p| p.is_none_or(|p| p.prob == 0.0))
            && self.tube_failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration_s: u64,
    #[serde(default)]
    pub initial_parked: u32,
    pub arrivals: Vec<RateSegment>,
    pub dwell: DwellSpec,
    pub speed_mph: (f64, f64),
    pub wheelbase_ft: (f64, f64),
    pub tubes: TubeArray,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Minimum time between the starts of two crossings. Defaults to the
    /// slowest, longest crossing plus one second.
    #[serde(default)]
    pub min_separation_ms: Option<u64>,
}

impl ScenarioSpec {
    /// A two-tube scenario with a constant enter rate and no noise.
    pub fn simple(
        seed: u64,
        duration_s: u64,
        enters_per_hour: f64,
        layout: &ChannelLayout,
    ) -> Self {
        Self {
            seed,
            duration_s,
            initial_parked: 0,
            arrivals: vec![RateSegment {
                from_s: 0,
                enters_per_hour,
            }],
            dwell: DwellSpec {
                mean_s: 3600.0,
                min_s: 60.0,
                max_s: 4.0 * 3600.0,
            },
            speed_mph: (2.0, 20.0),
            wheelbase_ft: (6.0, 14.0),
            tubes: TubeArray::from_layout(layout),
            noise: NoiseSpec::default(),
            min_separation_ms: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_s == 0 {
            return Err(invalid("duration_s", "must be positive"));
        }
        for seg in &self.arrivals {
            if !(seg.enters_per_hour >= 0.0 && seg.enters_per_hour.is_finite()) {
                return Err(invalid(
                    "arrivals",
                    format!("rate {} must be finite and >= 0", seg.enters_per_hour),
                ));
            }
        }
        if self.arrivals.windows(2).any(|w| w[0].from_s >= w[1].from_s) {
            return Err(invalid(
                "arrivals",
                "segments must start in increasing order",
            ));
        }
        let d = &self.dwell;
        if !(d.mean_s > 0.0 && d.min_s >= 0.0 && d.max_s > d.min_s && d.max_s.is_finite()) {
            return Err(invalid("dwell", "need mean > 0 and 0 <= min < max < inf"));
        }
        let (lo, hi) = self.speed_mph;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("speed_mph", "need 0 < min <= max"));
        }
        let (lo, hi) = self.wheelbase_ft;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("wheelbase_ft", "need 0 < min <= max"));
        }
        if self.tubes.channels.len() < 2 {
            return Err(invalid("tubes.channels", "need at least two tubes"));
        }
        if !(self.tubes.spacing_ft > 0.0) {
            return Err(invalid("tubes.spacing_ft", "must be positive"));
        }
        self.noise.validate()
    }

    fn rate_at(&self, t_s: f64) -> f64 {
        self.arrivals
            .iter()
            .rev()
            .find(|s| s.from_s as f64 <= t_s)
            .map_or(0.0, |s| s.enters_per_hour)
    }

    /// Default crossing separation: slowest, longest crossing plus a second.
    pub fn min_separation_ms(&self) -> u64 {
        self.min_separation_ms.unwrap_or_else(|| {
            let fps = self.speed_mph.0 * FPS_PER_MPH;
            ((self.wheelbase_ft.1 + self.tubes.length_ft()) / fps * 1000.0).ceil() as u64 + 1000
        })
    }
}

/// A ground-truth vehicle. `enter_ms` is `None` for vehicles parked at the
/// start, `exit_ms` is `None` for vehicles still parked at the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthVehicle {
    pub vehicle_id: u32,
    pub enter_ms: Option<u64>,
    pub exit_ms: Option<u64>,
    pub speed_mph: f64,
    pub wheelbase_ft: f64,
}

/// Occupancy from `t_ms` on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyStep {
    pub t_ms: u64,
    pub occupancy: i64,
}

/// One vehicle crossing the tube array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub vehicle_id: u32,
    pub direction: Direction,
    pub t_ms: u64,
    pub speed_mph: f64,
    pub wheelbase_ft: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub initial: i64,
    pub vehicles: Vec<TruthVehicle>,
    /// Step function starting at `t_ms = 0` with the initial occupancy.
    pub occupancy: Vec<OccupancyStep>,
}

impl Scenario {
    /// All crossings in time order.
    pub fn crossings(&self) -> Vec<Crossing> {
        let mut out = Vec::new();
        for v in &self.vehicles {
            for (t, direction) in [(v.enter_ms, Direction::Enter), (v.exit_ms, Direction::Exit)] {
                if let Some(t_ms) = t {
                    out.push(Crossing {
                        vehicle_id: v.vehicle_id,
                        direction,
                        t_ms,
                        speed_mph: v.speed_mph,
                        wheelbase_ft: v.wheelbase_ft,
                    });
                }
            }
        }
        out.sort_by_key(|c| (c.t_ms, c.vehicle_id));
        out
    }

    pub fn occupancy_at(&self, t_ms: u64) -> i64 {
        let i = self.occupancy.partition_point(|s| s.t_ms <= t_ms);
        self.occupancy[i.saturating_sub(1)].occupancy
    }

    pub fn final_occupancy(&self) -> i64 {
        self.occupancy.last().map_or(self.initial, |s| s.occupancy)
    }

    /// Per-crossing records as an ideal counter would report them, with
    /// timestamps truncated to the second like detected records.
    pub fn truth_records(&self, epoch: NaiveDateTime, counter_id: &str) -> Vec<VehicleRecord> {
        self.crossings()
            .iter()
            .map(|c| {
                VehicleRecord::new(
                    epoch + Duration::seconds((c.t_ms / 1000) as i64),
                    c.direction,
                    counter_id,
                )
                .with_speed(c.speed_mph)
                .with_wheelbase(c.wheelbase_ft)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    // Exits sort before enters at equal request time so the lot drains first.
    Exit(u32),
    Enter(u32),
}

/// Draws a scenario: Poisson enters per rate segment, truncated exponential
/// dwell, uniform speed and wheelbase. Crossings are serialized so that
/// consecutive starts are at least [`ScenarioSpec::min_separation_ms`]
/// apart; a vehicle whose delayed enter or exit falls past the end is
/// dropped or stays parked respectively.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let end_ms = spec.duration_s * 1000;
    let end_s = spec.duration_s as f64;

    // Arrival requests, piecewise homogeneous Poisson.
    let mut requests: Vec<f64> = Vec::new();
    for (i, seg) in spec.arrivals.iter().enumerate() {
        let from = seg.from_s as f64;
        let to = spec
            .arrivals
            .get(i + 1)
            .map_or(end_s, |n| n.from_s as f64)
            .min(end_s);
        let rate = spec.rate_at(from) / 3600.0;
        if rate <= 0.0 || from >= to {
            continue;
        }
        let exp = Exp::new(rate).expect("rate is positive and finite");
        let mut t = from;
        loop {
            t += exp.sample(&mut rng);
            if t >= to {
                break;
            }
            requests.push(t);
        }
    }

    struct Draw {
        dwell_ms: u64,
        speed_mph: f64,
        wheelbase_ft: f64,
    }
    let draw = |rng: &mut ChaCha8Rng| Draw {
        dwell_ms: (spec.dwell.sample(rng) * 1000.0).round() as u64,
        speed_mph: rng.random_range(spec.speed_mph.0..=spec.speed_mph.1),
        wheelbase_ft: rng.random_range(spec.wheelbase_ft.0..=spec.wheelbase_ft.1),
    };

    let initial = spec.initial_parked as usize;
    let mut vehicles: Vec<TruthVehicle> = Vec::with_capacity(initial + requests.len());
    let mut dwell: Vec<u64> = Vec::with_capacity(initial + requests.len());
    let mut queue: BinaryHeap<Reverse<(u64, Pending)>> = BinaryHeap::new();
    for id in 0..initial as u32 {
        let d = draw(&mut rng);
        vehicles.push(TruthVehicle {
            vehicle_id: id,
            enter_ms: None,
            exit_ms: None,
            speed_mph: d.speed_mph,
            wheelbase_ft: d.wheelbase_ft,
        });
        dwell.push(d.dwell_ms);
        // Parked vehicles leave uniformly over their first dwell.
        let leave = rng.random_range(0..=d.dwell_ms);
        queue.push(Reverse((leave, Pending::Exit(id))));
    }
    for t in &requests {
        let id = vehicles.len() as u32;
        let d = draw(&mut rng);
        vehicles.push(TruthVehicle {
            vehicle_id: id,
            enter_ms: None,
            exit_ms: None,
            speed_mph: d.speed_mph,
            wheelbase_ft: d.wheelbase_ft,
        });
        dwell.push(d.dwell_ms);
        queue.push(Reverse(((t * 1000.0).round() as u64, Pending::Enter(id))));
    }

    let sep = spec.min_separation_ms();
    let mut next_free = 0u64;
    let mut entered = vec![false; vehicles.len()];
    while let Some(Reverse((requested, event))) = queue.pop() {
        let t = requested.max(next_free);
        if t >= end_ms {
            continue;
        }
        next_free = t + sep;
        match event {
            Pending::Enter(id) => {
                let v = &mut vehicles[id as usize];
                v.enter_ms = Some(t);
                entered[id as usize] = true;
                queue.push(Reverse((t + dwell[id as usize], Pending::Exit(id))));
            }
            Pending::Exit(id) => vehicles[id as usize].exit_ms = Some(t),
        }
    }
    // Arrivals pushed past the end never happened.
    let mut kept: Vec<TruthVehicle> = vehicles
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i < initial || entered[*i])
        .map(|(_, v)| v)
        .collect();
    for (i, v) in kept.iter_mut().enumerate() {
        v.vehicle_id = i as u32;
    }

    let mut scenario = Scenario {
        initial: initial as i64,
        vehicles: kept,
        occupancy: Vec::new(),
    };
    let mut occ = scenario.initial;
    scenario.occupancy.push(OccupancyStep {
        t_ms: 0,
        occupancy: occ,
    });
    for c in scenario.crossings() {
        occ += c.direction.delta();
        if scenario.occupancy.last().is_some_and(|s| s.t_ms == c.t_ms) {
            scenario.occupancy.last_mut().expect("checked").occupancy = occ;
        } else {
            scenario.occupancy.push(OccupancyStep {
                t_ms: c.t_ms,
                occupancy: occ,
            });
        }
    }
    Ok(scenario)
}

/// [`generate_scenario`] over many specs, in input order.
pub fn generate_batch(
    specs: &[ScenarioSpec],
    exec: Execution,
) -> Vec<Result<Scenario, SynthError>> {
    par::map(specs, exec, generate_scenario)
}

/// Pulses of one crossing. The lead pulse is at `t_ms`; the rest are
/// rounded to the nearest ms from exact kinematics.
fn crossing_pulses(
    tubes: &TubeArray,
    direction: Direction,
    t_ms: u64,
    speed_mph: f64,
    wheelbase_ft: f64,
    out: &mut Vec<Pulse>,
) {
    let fps = speed_mph * FPS_PER_MPH;
    let n = tubes.channels.len();
    for axle in 0..2 {
        for k in 0..n {
            let channel = match direction {
                Direction::Enter => tubes.channels[k],
                Direction::Exit => tubes.channels[n - 1 - k],
            };
            let dist = k as f64 * tubes.spacing_ft + axle as f64 * wheelbase_ft;
            out.push(Pulse::new(
                channel,
                t_ms + (dist / fps * 1000.0).round() as u64,
            ));
        }
    }
}

/// Forward model of the counter: two axles across every tube, plus noise.
/// Pulses of a failed tube at or after its failure time are suppressed.
/// The result is sorted.
pub fn emit_pulses(
    scenario: &Scenario,
    tubes: &TubeArray,
    noise: &NoiseSpec,
    seed: u64,
) -> Vec<Pulse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(scenario.vehicles.len() * 4 * tubes.channels.len());
    let mut crossing = Vec::with_capacity(2 * tubes.channels.len());
    for c in scenario.crossings() {
        crossing.clear();
        crossing_pulses(
            tubes,
            c.direction,
            c.t_ms,
            c.speed_mph,
            c.wheelbase_ft,
            &mut crossing,
        );
        if let Some(offset) = noise.crosstalk.and_then(|p| p.fires(&mut rng)) {
            crossing_pulses(
                tubes,
                c.direction.flipped(),
                c.t_ms + offset,
                c.speed_mph,
                c.wheelbase_ft,
                &mut crossing,
            );
        }
        if let Some(offset) = noise.angled_crossing.and_then(|p| p.fires(&mut rng)) {
            let doubled: Vec<Pulse> = crossing
                .iter()
                .map(|p| Pulse::new(p.channel, p.timestamp_ms + offset))
                .collect();
            crossing.extend(doubled);
        }
        if let Some(reverb) = noise.reverberation {
            let echoes: Vec<Pulse> = crossing
                .iter()
                .filter_map(|p| {
                    reverb
                        .fires(&mut rng)
                        .map(|d| Pulse::new(p.channel, p.timestamp_ms + d))
                })
                .collect();
            crossing.extend(echoes);
        }
        out.extend_from_slice(&crossing);
    }
    if let Some(f) = noise.tube_failure {
        out.retain(|p| !(p.channel == f.channel && p.timestamp_ms >= f.fail_time_ms));
    }
    out.sort();
    out
}

/// Writes `vehicle_id,enter_ms,exit_ms,speed_mph,wheelbase_ft`; missing
/// times are empty fields.
pub fn write_truth<W: Write>(scenario: &Scenario, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "vehicle_id",
        "enter_ms",
        "exit_ms",
        "speed_mph",
        "wheelbase_ft",
    ])?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for v in &scenario.vehicles {
        w.write_record([
            v.vehicle_id.to_string(),
            opt(v.enter_ms),
            opt(v.exit_ms),
            format!("{:.4}", v.speed_mph),
            format!("{:.4}", v.wheelbase_ft),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse_engine::{detect_with, PairingParams};

    fn ab() -> ChannelLayout {
        ChannelLayout::new(Channel::A, Channel::B, 2.0)
    }

    fn one_vehicle(direction: Direction) -> Scenario {
        let (enter_ms, exit_ms) = match direction {
            Direction::Enter => (Some(1000), None),
            Direction::Exit => (None, Some(1000)),
        };
        Scenario {
            initial: 0,
            vehicles: vec![TruthVehicle {
                vehicle_id: 0,
                enter_ms,
                exit_ms,
                speed_mph: 20.0 / FPS_PER_MPH,
                wheelbase_ft: 10.0,
            }],
            occupancy: vec![OccupancyStep {
                t_ms: 0,
                occupancy: 0,
            }],
        }
    }

    #[test]
    fn single_enter_kinematics() {
        let p = emit_pulses(
            &one_vehicle(Direction::Enter),
            &TubeArray::from_layout(&ab()),
            &NoiseSpec::default(),
            1,
        );
        let a = |t| Pulse::new(Channel::A, t);
        let b = |t| Pulse::new(Channel::B, t);
        assert_eq!(p, vec![a(1000), b(1100), a(1500), b(1600)]);
        let p = emit_pulses(
            &one_vehicle(Direction::Exit),
            &TubeArray::from_layout(&ab()),
            &NoiseSpec::default(),
            1,
        );
        assert_eq!(p, vec![b(1000), a(1100), b(1500), a(1600)]);
    }

    #[test]
    fn zero_rate_is_empty() {
        let spec = ScenarioSpec::simple(7, 3600, 0.0, &ab());
        let s = generate_scenario(&spec).unwrap();
        assert!(s.vehicles.is_empty());
        assert_eq!(
            s.occupancy,
            vec![OccupancyStep {
                t_ms: 0,
                occupancy: 0
            }]
        );
        assert!(emit_pulses(&s, &spec.tubes, &spec.noise, 7).is_empty());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut spec = ScenarioSpec::simple(42, 86_400, 20.0, &ab());
        spec.noise.reverberation = Some(NoiseProcess {
            prob: 0.3,
            delay_ms: (20, 80),
        });
        let s1 = generate_scenario(&spec).unwrap();
        let s2 = generate_scenario(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(
            emit_pulses(&s1, &spec.tubes, &spec.noise, 42),
            emit_pulses(&s2, &spec.tubes, &spec.noise, 42)
        );
        let mut spec3 = spec.clone();
        spec3.seed = 43;
        assert_ne!(generate_scenario(&spec3).unwrap(), s1);
    }

    #[test]
    fn occupancy_is_consistent_and_nonnegative() {
        let mut spec = ScenarioSpec::simple(3, 86_400, 30.0, &ab());
        spec.initial_parked = 5;
        let s = generate_scenario(&spec).unwrap();
        let enters = s.vehicles.iter().filter(|v| v.enter_ms.is_some()).count() as i64;
        let exits = s.vehicles.iter().filter(|v| v.exit_ms.is_some()).count() as i64;
        assert_eq!(s.final_occupancy(), 5 + enters - exits);
        assert!(s.occupancy.iter().all(|o| o.occupancy >= 0));
        for v in &s.vehicles {
            if let (Some(a), Some(b)) = (v.enter_ms, v.exit_ms) {
                assert!(a < b);
            }
        }
        let c = s.crossings();
        assert!(c
            .windows(2)
            .all(|w| w[1].t_ms - w[0].t_ms >= spec.min_separation_ms()));
    }

    #[test]
    fn ten_in_ten_out_conserves() {
        let mut spec = ScenarioSpec::simple(11, 86_400, 0.0, &ab());
        spec.arrivals = vec![
            RateSegment {
                from_s: 0,
                enters_per_hour: 10.0,
            },
            RateSegment {
                from_s: 3600,
                enters_per_hour: 0.0,
            },
        ];
        spec.dwell = DwellSpec {
            mean_s: 600.0,
            min_s: 60.0,
            max_s: 1800.0,
        };
        let s = generate_scenario(&spec).unwrap();
        assert!(s.vehicles.iter().all(|v| v.exit_ms.is_some()));
        assert_eq!(s.final_occupancy(), 0);
    }

    #[test]
    fn clean_noise_gives_four_pulses_per_crossing() {
        let spec = ScenarioSpec::simple(5, 86_400, 15.0, &ab());
        let s = generate_scenario(&spec).unwrap();
        let p = emit_pulses(&s, &spec.tubes, &spec.noise, 5);
        assert_eq!(p.len(), 4 * s.crossings().len());
    }

    #[test]
    fn failed_tube_is_silent() {
        let layout3 = TubeArray::new(vec![Channel::A, Channel::B, Channel::C], 2.0);
        let mut spec = ScenarioSpec::simple(5, 86_400, 15.0, &ab());
        spec.tubes = layout3;
        spec.noise.tube_failure = Some(TubeFailure {
            channel: Channel::B,
            fail_time_ms: 0,
        });
        let s = generate_scenario(&spec).unwrap();
        let p = emit_pulses(&s, &spec.tubes, &spec.noise, 5);
        assert!(!p.is_empty());
        assert!(p.iter().all(|p| p.channel != Channel::B));
    }

    #[test]
    fn noisy_emission_roundtrips_through_detection() {
        let spec = ScenarioSpec::simple(9, 86_400, 12.0, &ab());
        let s = generate_scenario(&spec).unwrap();
        let p = emit_pulses(&s, &spec.tubes, &spec.noise, 9);
        let epoch = chrono::NaiveDate::from_ymd_opt(2025, 1, 13)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let det = detect_with(&p, &ab(), &PairingParams::for_layout(&ab()), 0, epoch, "c").unwrap();
        assert_eq!(det.records.len(), s.crossings().len());
        assert_eq!(det.unclassified, 0);
    }

    #[test]
    fn truncated_exponential_stays_in_bounds() {
        let d = DwellSpec {
            mean_s: 100.0,
            min_s: 10.0,
            max_s: 50.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            assert!((10.0..=50.0).contains(&x), "{x}");
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut spec = ScenarioSpec::simple(1, 3600, 5.0, &ab());
        spec.noise.crosstalk = Some(NoiseProcess {
            prob: 1.5,
            delay_ms: (0, 1),
        });
        assert!(matches!(
            generate_scenario(&spec),
            Err(SynthError::Invalid {
                field: "noise.crosstalk",
                ..
            })
        ));
        let mut spec = ScenarioSpec::simple(1, 3600, -1.0, &ab());
        assert!(matches!(
            spec.validate(),
            Err(SynthError::Invalid {
                field: "arrivals",
                ..
            })
        ));
        spec.arrivals.clear();
        spec.speed_mph = (0.0, 5.0);
        assert!(matches!(
            spec.validate(),
            Err(SynthError::Invalid {
                field: "speed_mph",
                ..
            })
        ));
    }

    #[test]
    fn truth_csv_layout() {
        let mut buf = Vec::new();
        write_truth(&one_vehicle(Direction::Enter), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "vehicle_id,enter_ms,exit_ms,speed_mph,wheelbase_ft\n0,1000,,13.6363,10.0000\n"
        );
    }
}
