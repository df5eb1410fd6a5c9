use std::hint::black_box;

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tubecount::ingest::{OpenHours, TimeOfDay};
use tubecount::metrics::series_metrics;
use tubecount::par::Execution;
use tubecount::synth::{
    emit_pulses, generate_batch, generate_scenario, NoiseProcess, ScenarioSpec,
};
use tubecount::tuner::{tune, CounterInput, Target, TuneOptions};
use tubecount::{demand, Channel, ChannelLayout, CountConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn layout() -> ChannelLayout {
    ChannelLayout::new(Channel::A, Channel::B, 2.0)
}

fn start() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2025, 1, 13)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn bench_tune(c: &mut Criterion) {
    let mut spec = ScenarioSpec::simple(7, 24 * 3600, 40.0, &layout());
    spec.noise.reverberation = Some(NoiseProcess {
        prob: 0.5,
        delay_ms: (30, 80),
    });
    let scenario = generate_scenario(&spec).unwrap();
    let pulses = emit_pulses(&scenario, &spec.tubes, &spec.noise, 8);
    let mut config = CountConfig::new("bench", 200, start());
    config.initial_observed = Some(0);
    config.final_observed = Some(scenario.final_occupancy() as u32);
    let inputs = vec![CounterInput::Pulses {
        counter_id: "p".into(),
        pulses,
    }];

    let mut group = c.benchmark_group("tune_grid_99");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut opts = TuneOptions::new(Target::Observed);
        opts.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| tune(black_box(&inputs), &config, opts).unwrap())
        });
    }
    group.finish();
}

fn bench_synth_batch(c: &mut Criterion) {
    let specs: Vec<ScenarioSpec> = (0..64)
        .map(|i| ScenarioSpec::simple(i, 8 * 3600, 60.0, &layout()))
        .collect();
    let mut group = c.benchmark_group("synth_batch_64");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| generate_batch(black_box(&specs), exec)));
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let spec = ScenarioSpec::simple(3, 14 * 24 * 3600, 30.0, &layout());
    let scenario = generate_scenario(&spec).unwrap();
    let records = scenario.truth_records(start(), "s");
    let series = demand::accumulate(&records, start(), 1, 0, None).unwrap();
    let hours = OpenHours::every_day(TimeOfDay::hms(6, 0, 0), TimeOfDay::hms(22, 0, 0));
    let mut group = c.benchmark_group("day_metrics_14_days");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| series_metrics(black_box(&series), &hours, 0.854, 200, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tune, bench_synth_batch, bench_metrics);
criterion_main!(benches);
