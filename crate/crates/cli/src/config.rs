//! Flat `section.key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use atsltd::convert::AdaptiveConfig;
use atsltd::files::CalibrationFile;
use atsltd::{
    ConfidenceInterval, EvalConfig, GridSpec, PipelineConfig, SensorGeometry, TrackerConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub enum IntervalSource {
    Published,
    File(PathBuf),
    /// Calibrate on fixed-window frames of the input stream itself.
    Calibrate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: SensorGeometry,
    pub grid_r: usize,
    pub interval: IntervalSource,
    pub omega: f64,
    pub calibrate_window_ms: f64,
    pub check_every: u32,
    pub max_open_ms: Option<f64>,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
    pub workers: usize,
    pub dump_frames: bool,
    pub dump_proposals: bool,
    pub include_trailing: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry::DAVIS240,
            grid_r: 4,
            interval: IntervalSource::Published,
            omega: 0.05,
            calibrate_window_ms: 50.0,
            check_every: 200,
            max_open_ms: None,
            tracker: TrackerConfig::default(),
            eval: EvalConfig::default(),
            workers: 1,
            dump_frames: false,
            dump_proposals: false,
            include_trailing: false,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

impl RunConfig {
    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.tracker;
        let d = &t.detector;
        let e = &self.eval;
        let interval = match &self.interval {
            IntervalSource::Published => "published".to_owned(),
            IntervalSource::File(p) => p.display().to_string(),
            IntervalSource::Calibrate => "calibrate".to_owned(),
        };
        vec![
            ("sensor.width", self.geometry.width.to_string()),
            ("sensor.height", self.geometry.height.to_string()),
            ("grid.r", self.grid_r.to_string()),
            ("interval.source", interval),
            ("interval.omega", self.omega.to_string()),
            ("interval.window_ms", self.calibrate_window_ms.to_string()),
            ("converter.check_every", self.check_every.to_string()),
            ("converter.max_open_ms", opt(self.max_open_ms)),
            ("tracker.tau", t.tau.to_string()),
            ("tracker.lambda", t.lambda.to_string()),
            ("tracker.mu", t.mu.to_string()),
            ("tracker.recovery_growth", t.recovery_growth.to_string()),
            ("tracker.resume_score", t.resume_score.to_string()),
            ("tracker.selection_ratio", t.selection_ratio.to_string()),
            ("detector.max_boxes", d.max_boxes.to_string()),
            ("detector.min_box_area", d.min_box_area.to_string()),
            ("detector.nms_overlap", d.nms_overlap.to_string()),
            ("detector.recency_exponent", d.recency_exponent.to_string()),
            ("detector.straddle_width", d.straddle_width.to_string()),
            ("detector.straddle_weight", d.straddle_weight.to_string()),
            ("detector.min_score_ratio", d.min_score_ratio.to_string()),
            ("detector.size_exponent", d.size_exponent.to_string()),
            ("eval.n_rep", e.n_rep.to_string()),
            ("eval.failure_threshold", e.failure_ap_threshold.to_string()),
            ("eval.reinit", e.reinit_on_failure.to_string()),
            ("eval.reinit_after", e.reinit_after.to_string()),
            ("run.workers", self.workers.to_string()),
            ("run.dump_frames", self.dump_frames.to_string()),
            ("run.dump_proposals", self.dump_proposals.to_string()),
            ("run.include_trailing", self.include_trailing.to_string()),
            ("synth.seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.tracker;
        let d = &mut t.detector;
        let e = &mut self.eval;
        match key {
            "sensor.width" => self.geometry.width = parse(key, value)?,
            "sensor.height" => self.geometry.height = parse(key, value)?,
            "grid.r" => self.grid_r = parse(key, value)?,
            "interval.source" => {
                self.interval = match value {
                    "published" => IntervalSource::Published,
                    "calibrate" => IntervalSource::Calibrate,
                    path => IntervalSource::File(PathBuf::from(path)),
                }
            }
            "interval.omega" => self.omega = parse(key, value)?,
            "interval.window_ms" => self.calibrate_window_ms = parse(key, value)?,
            "converter.check_every" => self.check_every = parse(key, value)?,
            "converter.max_open_ms" => {
                self.max_open_ms = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "tracker.tau" => t.tau = parse(key, value)?,
            "tracker.lambda" => t.lambda = parse(key, value)?,
            "tracker.mu" => t.mu = parse(key, value)?,
            "tracker.recovery_growth" => t.recovery_growth = parse(key, value)?,
            "tracker.resume_score" => t.resume_score = parse(key, value)?,
            "tracker.selection_ratio" => t.selection_ratio = parse(key, value)?,
            "detector.max_boxes" => d.max_boxes = parse(key, value)?,
            "detector.min_box_area" => d.min_box_area = parse(key, value)?,
            "detector.nms_overlap" => d.nms_overlap = parse(key, value)?,
            "detector.recency_exponent" => d.recency_exponent = parse(key, value)?,
            "detector.straddle_width" => d.straddle_width = parse(key, value)?,
            "detector.straddle_weight" => d.straddle_weight = parse(key, value)?,
            "detector.min_score_ratio" => d.min_score_ratio = parse(key, value)?,
            "detector.size_exponent" => d.size_exponent = parse(key, value)?,
            "eval.n_rep" => e.n_rep = parse(key, value)?,
            "eval.failure_threshold" => e.failure_ap_threshold = parse(key, value)?,
            "eval.reinit" => e.reinit_on_failure = parse_bool(key, value)?,
            "eval.reinit_after" => e.reinit_after = parse(key, value)?,
            "run.workers" => self.workers = parse(key, value)?,
            "run.dump_frames" => self.dump_frames = parse_bool(key, value)?,
            "run.dump_proposals" => self.dump_proposals = parse_bool(key, value)?,
            "run.include_trailing" => self.include_trailing = parse_bool(key, value)?,
            "synth.seed" => self.seed = parse(key, value)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        SensorGeometry::new(self.geometry.width, self.geometry.height)?;
        self.grid()?;
        self.tracker.validate()?;
        self.eval.validate()?;
        if self.workers == 0 {
            bail!("run.workers must be at least 1");
        }
        if !(self.calibrate_window_ms > 0.0) {
            bail!("interval.window_ms must be positive");
        }
        if let IntervalSource::File(p) = &self.interval {
            if !p.is_file() {
                bail!(
                    "interval.source: calibration file {} does not exist",
                    p.display()
                );
            }
        }
        if self.max_open_ms.is_some_and(|m| !(m > 0.0)) {
            bail!("converter.max_open_ms must be positive");
        }
        if self.check_every == 0 {
            bail!("converter.check_every must be at least 1");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::for_geometry(self.geometry, self.grid_r)?)
    }

    /// The interval for a run; `events` feeds inline calibration.
    pub fn resolve_interval(&self, events: Option<&[atsltd::Event]>) -> Result<ConfidenceInterval> {
        match &self.interval {
            IntervalSource::Published => Ok(ConfidenceInterval::published_default()),
            IntervalSource::File(p) => Ok(CalibrationFile::load(p)?.interval()?),
            IntervalSource::Calibrate => {
                let events =
                    events.ok_or_else(|| anyhow!("inline calibration needs an event stream"))?;
                let window = (self.calibrate_window_ms * 1000.0).round() as i64;
                let frames =
                    atsltd::convert::convert_fixed_time_window(events, self.geometry, window)?;
                let set = atsltd::CalibrationSet::from_frames(&frames, self.grid()?)?;
                Ok(atsltd::nzge::calibrate_interval(
                    &set.summary()?,
                    self.omega,
                )?)
            }
        }
    }

    pub fn pipeline(&self, interval: ConfidenceInterval) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            converter: AdaptiveConfig {
                geometry: self.geometry,
                grid: self.grid()?,
                interval,
                check_every: self.check_every,
                max_open_us: self.max_open_ms.map(|m| (m * 1000.0).round() as i64),
            },
            tracker: self.tracker.clone(),
            workers: self.workers,
            include_trailing: self.include_trailing,
        })
    }

    /// Key list with defaults, for `--help`.
    pub fn help_text() -> String {
        let mut s = String::from(
            "Configuration keys (set in --config FILE as `key = value`, or with --set key=value).\nDefaults:\n",
        );
        for (k, v) in Self::default().entries() {
            s.push_str(&format!("  {k:<28} {v}\n"));
        }
        s.push_str("interval.source takes `published`, `calibrate` or a calibration file path.");
        s
    }
}
