//! `tubecount`: parking demand analysis from road-tube counter data.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tubecount",
    version,
    about = "Parking demand analysis from road-tube counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Correct demand and write the report, plots, audit files and summary.
    Analyze(AnalyzeArgs),
    /// Search dead time and wheelbase range for the smallest end-of-count error.
    Tune(TuneArgs),
    /// Generate a synthetic pulse log and its ground truth.
    Synth(SynthArgs),
    /// Compare standard and augmented utilization per day.
    Compare(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Standard,
    Augmented,
}

impl From<MethodArg> for tubecount::pipeline::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Standard => tubecount::pipeline::Method::Standard,
            MethodArg::Augmented => tubecount::pipeline::Method::Augmented,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputKind {
    Worksheet,
    Pulses,
}

/// `KIND=PATH@COUNTER`; the counter defaults to the file stem.
#[derive(Debug, Clone, PartialEq)]
struct InputSpec {
    kind: InputKind,
    path: PathBuf,
    counter_id: String,
}

impl FromStr for InputSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once('=').ok_or("expected KIND=PATH@COUNTER")?;
        let kind = match kind.to_ascii_lowercase().as_str() {
            "worksheet" => InputKind::Worksheet,
            "pulses" | "pulse_log" | "pulse-log" => InputKind::Pulses,
            other => {
                return Err(format!(
                    "unknown input kind '{other}' (worksheet or pulses)"
                ))
            }
        };
        let (path, counter) = match rest.rsplit_once('@') {
            Some((p, c)) if !c.is_empty() => (PathBuf::from(p), c.to_string()),
            _ => {
                let p = PathBuf::from(rest);
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (p, stem)
            }
        };
        if path.as_os_str().is_empty() {
            return Err("empty input path".into());
        }
        Ok(InputSpec {
            kind,
            path,
            counter_id: counter,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct WheelbaseRange(f64, f64);

impl FromStr for WheelbaseRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once('-')
            .ok_or_else(|| format!("wheelbase range '{s}' is not MIN-MAX"))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| format!("bad wheelbase minimum '{lo}'"))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| format!("bad wheelbase maximum '{hi}'"))?;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(format!("wheelbase range '{s}' needs 0 <= MIN <= MAX"));
        }
        Ok(WheelbaseRange(lo, hi))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Count configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Input file as KIND=PATH@COUNTER, KIND is worksheet or pulses. Repeatable.
    #[arg(long = "in", value_name = "KIND=PATH@COUNTER", required = true)]
    inputs: Vec<InputSpec>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Dead-time candidates in ms, comma separated.
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<u64>>,
    /// Wheelbase ranges in ft as MIN-MAX, comma separated.
    #[arg(long, value_delimiter = ',')]
    w_grid: Option<Vec<WheelbaseRange>>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "standard")]
    method: MethodArg,
    /// Tune dead time and wheelbase range before analysing.
    #[arg(long)]
    tune: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Standard tunes against the observed final count, augmented against expected demand.
    #[arg(long, value_enum, default_value = "standard")]
    method: MethodArg,
    #[command(flatten)]
    grid: GridArgs,
    /// Stop at the first candidate with zero residual.
    #[arg(long)]
    early_stop: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scenario specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
