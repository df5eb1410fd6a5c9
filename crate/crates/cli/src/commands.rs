use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tubecount::ingest::{
    load_config, parse_pulse_log, parse_vehicle_worksheet, write_pulse_log, ConfigError,
    CountConfig,
};
use tubecount::metrics::{
    plot_csv, plot_svg, render_report, utilization_series, MetricsError, PlotData, ReportHeader,
};
use tubecount::par::Execution;
use tubecount::pipeline::{
    analyze as run_analysis, compare as compare_methods, write_accounting, write_comparison,
    write_comparison_wide, write_days_audit, write_records, Analysis, AnalysisOptions, Method,
    PipelineError,
};
use tubecount::synth::{emit_pulses, generate_scenario, write_truth, ScenarioSpec, SynthError};
use tubecount::tuner::{
    default_d_grid, default_w_grid, tune as run_tune, CounterInput, Target, TuneError, TuneOptions,
    TuningResult,
};
use tubecount::ParseError;

use crate::{AnalyzeArgs, GridArgs, InputKind, InputSpec, RunArgs, SynthArgs, TuneArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("config {}: {source}", path.display())]
    Config { path: PathBuf, source: ConfigError },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("writing {}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("tuning failed: {source}")]
    Tune { source: TuneError, anchoring: bool },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    /// 2 when the augmented method cannot anchor, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) if e.is_anchoring_failure() => 2,
            CliError::Tune {
                anchoring: true, ..
            } => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(io_err(path))
}

fn write_csv<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::result::Result<(), csv::Error>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    w.flush().map_err(io_err(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn config(path: &Path) -> Result<CountConfig> {
    load_config(path).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn load_inputs(specs: &[InputSpec], config: &CountConfig) -> Result<Vec<CounterInput>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let reader = open(&spec.path)?;
        let parse_err = |source| CliError::Parse {
            path: spec.path.clone(),
            source,
        };
        let input = match spec.kind {
            InputKind::Worksheet => CounterInput::Records {
                counter_id: spec.counter_id.clone(),
                records: parse_vehicle_worksheet(reader, config, &spec.counter_id)
                    .map_err(parse_err)?,
            },
            InputKind::Pulses => CounterInput::Pulses {
                counter_id: spec.counter_id.clone(),
                pulses: parse_pulse_log(reader).map_err(parse_err)?,
            },
        };
        log::info!(
            "{}: loaded counter {}",
            spec.path.display(),
            spec.counter_id
        );
        out.push(input);
    }
    Ok(out)
}

fn execution(run: &RunArgs) -> Execution {
    if run.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn tune_options(
    grid: &GridArgs,
    config: &CountConfig,
    method: Method,
    exec: Execution,
) -> TuneOptions {
    let target = match method {
        Method::Standard => Target::Observed,
        Method::Augmented => Target::Expected,
    };
    let mut options = TuneOptions::new(target);
    options.execution = exec;
    options.d_grid = grid
        .d_grid
        .clone()
        .or_else(|| config.d_grid.clone())
        .unwrap_or_else(default_d_grid);
    options.w_grid = grid
        .w_grid
        .as_ref()
        .map(|w| w.iter().map(|r| (r.0, r.1)).collect())
        .or_else(|| config.w_grid.clone())
        .unwrap_or_else(default_w_grid);
    options
}

fn tune_and_write(
    inputs: &[CounterInput],
    config: &CountConfig,
    options: &TuneOptions,
    out: &Path,
) -> Result<TuningResult> {
    let result = run_tune(inputs, config, options).map_err(|source| {
        let anchoring =
            options.target == Target::Expected && matches!(source, TuneError::TargetUnavailable(_));
        CliError::Tune { source, anchoring }
    })?;
    let path = out.join("tuning_evaluations.csv");
    write_csv(&path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["d_ms", "w_min", "w_max", "residual", "end_demand", "target"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &result.evaluations {
            c.write_record([
                e.d_ms.to_string(),
                e.w_min.to_string(),
                e.w_max.to_string(),
                opt(e.residual.map(|v| v.to_string())),
                opt(e.end_demand.map(|v| v.to_string())),
                opt(e.target.map(|v| v.to_string())),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    #[derive(serde::Serialize)]
    struct Selected {
        d_bounce_ms: u64,
        wheelbase_min: f64,
        wheelbase_max: f64,
        residual: u64,
        target: Target,
        approximate_dead_time: bool,
        candidates_evaluated: usize,
    }
    write_json(
        &out.join("tuning_selected.json"),
        &Selected {
            d_bounce_ms: result.best_d_ms,
            wheelbase_min: result.best_w.0,
            wheelbase_max: result.best_w.1,
            residual: result.residual,
            target: options.target,
            approximate_dead_time: result.approximate_dead_time,
            candidates_evaluated: result.evaluations.len(),
        },
    )?;
    println!(
        "selected d = {} ms, wheelbase {}-{} ft",
        result.best_d_ms, result.best_w.0, result.best_w.1
    );
    println!("residual: {} vehicles", result.residual);
    if result.approximate_dead_time {
        log::warn!("worksheet input: dead time was emulated on 1-second timestamps");
    }
    Ok(result)
}

fn write_analysis(analysis: &Analysis, config: &CountConfig, out: &Path) -> Result<()> {
    if analysis.days.is_empty() {
        log::warn!("no samples fall within open hours; report and plots skipped");
    } else {
        let mut header = ReportHeader::from_config(config);
        if analysis.method == Method::Augmented {
            header.initial_cars = None;
        }
        write_text(
            &out.join("report.csv"),
            &render_report(&header, &analysis.days)?,
        )?;

        let util = utilization_series(&analysis.corrected.series, config.capacity);
        let series = &analysis.corrected.series;
        for (day, window) in analysis.days.iter().zip(&analysis.windows) {
            let data = PlotData {
                first: series.time_at(window.start),
                interval_s: series.interval_s,
                util: &util[window.clone()],
                threshold: analysis.threshold,
                day,
            };
            let stem = day.date.format("%Y-%m-%d").to_string();
            write_text(
                &out.join("plots").join(format!("{stem}.csv")),
                &plot_csv(&data),
            )?;
            write_text(
                &out.join("plots").join(format!("{stem}.svg")),
                &plot_svg(&data),
            )?;
        }
    }
    write_csv(&out.join("audit_days.csv"), |w| {
        write_days_audit(analysis, w)
    })?;
    write_csv(&out.join("audit_counts.csv"), |w| {
        write_accounting(&analysis.accounting, w)
    })?;
    write_csv(&out.join("flagged_false_positives.csv"), |w| {
        write_records(&analysis.flagged, w)
    })?;
    write_json(&out.join("summary.json"), &analysis.summary(config))?;
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut config = config(&args.run.config)?;
    let inputs = load_inputs(&args.run.inputs, &config)?;
    let exec = execution(&args.run);
    let method: Method = args.method.into();
    let mut options = AnalysisOptions {
        method,
        execution: exec,
        worksheet_dead_time: false,
    };
    if args.tune {
        let tuning = tune_options(&args.grid, &config, method, exec);
        let result = tune_and_write(&inputs, &config, &tuning, &args.run.out)?;
        config.d_bounce_ms = result.best_d_ms;
        config.wheelbase_min = result.best_w.0;
        config.wheelbase_max = result.best_w.1;
        options.worksheet_dead_time = result.approximate_dead_time;
    }
    let analysis = run_analysis(&inputs, &config, &options)?;
    write_analysis(&analysis, &config, &args.run.out)?;
    println!(
        "{} day(s) analysed, cumulative error {} vehicles, written to {}",
        analysis.days.len(),
        analysis.errors.sigma.last().copied().unwrap_or(0),
        args.run.out.display()
    );
    Ok(())
}

pub fn tune(args: &TuneArgs) -> Result<()> {
    let config = config(&args.run.config)?;
    let inputs = load_inputs(&args.run.inputs, &config)?;
    let mut options = tune_options(
        &args.grid,
        &config,
        args.method.into(),
        execution(&args.run),
    );
    options.early_stop = args.early_stop;
    tune_and_write(&inputs, &config, &options, &args.run.out)?;
    Ok(())
}

pub fn compare(args: &RunArgs) -> Result<()> {
    let config = config(&args.config)?;
    let inputs = load_inputs(&args.inputs, &config)?;
    let exec = execution(args);
    let standard = run_analysis(
        &inputs,
        &config,
        &AnalysisOptions {
            method: Method::Standard,
            execution: exec,
            worksheet_dead_time: false,
        },
    )?;
    let augmented = run_analysis(
        &inputs,
        &config,
        &AnalysisOptions {
            method: Method::Augmented,
            execution: exec,
            worksheet_dead_time: false,
        },
    )?;
    let rows = compare_methods(&standard, &augmented);
    write_csv(&args.out.join("comparison.csv"), |w| {
        write_comparison(&rows, w)
    })?;
    write_csv(&args.out.join("comparison_wide.csv"), |w| {
        write_comparison_wide(&rows, w)
    })?;
    let worst = rows
        .iter()
        .map(|r| r.diff_avg.abs().max(r.diff_max.abs()))
        .fold(0.0, f64::max);
    println!(
        "{} shared day(s), largest difference {:.1}%",
        rows.len(),
        worst * 100.0
    );
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).map_err(io_err(&args.spec))?;
    let mut spec: ScenarioSpec = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: args.spec.clone(),
        source,
    })?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scenario = generate_scenario(&spec)?;
    // Emission draws from its own stream so noise settings never perturb the scenario.
    let pulses = emit_pulses(
        &scenario,
        &spec.tubes,
        &spec.noise,
        spec.seed.wrapping_add(1),
    );
    write_csv(&args.out.join("pulses.csv"), |w| {
        write_pulse_log(&pulses, w)
    })?;
    write_csv(&args.out.join("truth.csv"), |w| write_truth(&scenario, w))?;
    write_csv(&args.out.join("occupancy.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t_ms", "occupancy"])?;
        for s in &scenario.occupancy {
            c.write_record([s.t_ms.to_string(), s.occupancy.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    println!(
        "{} vehicles, {} crossings, {} pulses, final occupancy {}",
        scenario.vehicles.len(),
        scenario.crossings().len(),
        pulses.len(),
        scenario.final_occupancy()
    );
    Ok(())
}
