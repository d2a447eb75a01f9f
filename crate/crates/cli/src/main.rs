#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod render;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "atsltd",
    version,
    about = "Adaptive time-surface frames and tracking-by-detection for event cameras",
    after_help = RunConfig::help_text()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Configuration file with `section.key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for per-object tracking and rendering [default: 1].
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

impl Common {
    fn load(&self, extra: &[(&str, String)]) -> anyhow::Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(w) = self.workers {
            overrides.push(format!("run.workers={w}"));
        }
        overrides.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the NZGE confidence interval and write a calibration file.
    #[command(after_help = RunConfig::help_text())]
    Calibrate(CalibrateArgs),
    /// Convert events to adaptive frames and track objects.
    #[command(after_help = RunConfig::help_text())]
    Track(TrackArgs),
    /// Score tracking results against ground truth.
    #[command(after_help = RunConfig::help_text())]
    Eval(EvalArgs),
    /// Draw result boxes onto dumped frames.
    #[command(after_help = RunConfig::help_text())]
    Render(RenderArgs),
    /// Generate a synthetic event stream with ground truth.
    #[command(after_help = RunConfig::help_text())]
    Synth(SynthArgs),
    /// Convert events to frames without tracking.
    #[command(after_help = RunConfig::help_text())]
    Convert(ConvertArgs),
    /// Measure event-loop throughput.
    #[command(after_help = RunConfig::help_text())]
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct CalibrateArgs {
    /// NZGE samples in bits, whitespace separated; `-` reads stdin.
    #[arg(long, value_name = "FILE|-", group = "source")]
    samples: Option<String>,
    /// Summary statistics `N,MEAN,STD`; `-` reads them from stdin.
    #[arg(long, value_name = "N,MEAN,STD|-", group = "source")]
    stats: Option<String>,
    /// Directory of dumped frames to measure.
    #[arg(long, value_name = "DIR", group = "source")]
    frames: Option<PathBuf>,
    /// Event file cut into fixed windows of `--window-ms`.
    #[arg(long, value_name = "PATH", group = "source")]
    events: Option<PathBuf>,
    /// Window for `--events` in milliseconds.
    #[arg(long, value_name = "MS", default_value_t = 50.0)]
    window_ms: f64,
    /// Significance level; 0.05 and 0.01 are supported.
    #[arg(long, default_value_t = 0.05)]
    omega: f64,
    /// Calibration file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("init").required(true))]
pub struct TrackArgs {
    /// Event file, one `t x y p` record per line.
    #[arg(long, value_name = "PATH")]
    events: PathBuf,
    /// Initial box `X,Y,W,H`; may be repeated, objects are numbered from 1.
    #[arg(long = "box", value_name = "X,Y,W,H", group = "init")]
    boxes: Vec<String>,
    /// Take initial boxes from the first ground-truth row of each object.
    #[arg(long, value_name = "PATH", group = "init")]
    gt: Option<PathBuf>,
    /// Output directory for results.csv and optional dumps.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Write each frame as two PNGs plus a JSON sidecar under DIR/frames.
    #[arg(long)]
    dump_frames: bool,
    /// Write raw detector output to DIR/proposals.jsonl.
    #[arg(long)]
    dump_proposals: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true))]
pub struct EvalArgs {
    /// Ground-truth CSV `object_id,t,x,y,w,h`.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    /// Result CSV from `track`.
    #[arg(long, value_name = "PATH", group = "input")]
    results: Option<PathBuf>,
    /// Run the full protocol, with reinitialization, on this event file.
    #[arg(long, value_name = "PATH", group = "input")]
    events: Option<PathBuf>,
    /// Report JSON to write; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write per-frame IoU as CSV.
    #[arg(long, value_name = "FILE")]
    frame_csv: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Result CSV from `track`.
    #[arg(long, value_name = "PATH")]
    results: PathBuf,
    /// Frame dump directory.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Output directory for annotated PNGs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("scene").required(true))]
pub struct SynthArgs {
    /// Scene script JSON.
    #[arg(long, value_name = "PATH", group = "scene")]
    script: Option<PathBuf>,
    /// Built-in scene.
    #[arg(long, value_enum, group = "scene")]
    preset: Option<Preset>,
    /// Seed; overrides the script's own.
    #[arg(long)]
    seed: Option<u64>,
    /// Preset square side in pixels.
    #[arg(long, default_value_t = 30.0)]
    side: f64,
    /// Preset speed in pixels per second.
    #[arg(long, default_value_t = 60.0)]
    speed: f64,
    /// Preset duration in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Events per contour pixel per pixel of travel.
    #[arg(long, default_value_t = 4.0)]
    density: f64,
    /// Background noise events per second.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Occlusion window `START,END` in seconds; may be repeated.
    #[arg(long, value_name = "START,END")]
    occlude: Vec<String>,
    /// Output directory for events.txt and gt.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// A square crossing the sensor horizontally.
    Square,
    /// The three-shape throughput scene.
    Bench,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertMode {
    /// Adaptive cuts on NZGE.
    Atsltd,
    /// Fixed time windows.
    Ftw,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long, value_name = "PATH")]
    events: PathBuf,
    #[arg(long, value_enum, default_value_t = ConvertMode::Atsltd)]
    mode: ConvertMode,
    /// Window length for `ftw` mode.
    #[arg(long, value_name = "MS", default_value_t = 9.0)]
    window_ms: f64,
    /// Output directory for frame dumps.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Measure this event file instead of the built-in scene.
    #[arg(long, value_name = "PATH")]
    events: Option<PathBuf>,
    /// Built-in scene length in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Timed passes; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATSLTD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Track(a) => commands::track(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => render::run(a),
        Command::Synth(a) => commands::synth(a),
        Command::Convert(a) => commands::convert(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
