//! Tracking by detection: per frame, the proposal overlapping the previous
//! box most is adopted; weak overlap switches to an expanding re-detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::convert::{AdaptiveConfig, AdaptiveConverter, FrameCutter};
use crate::detect::{propose, refine, refine_score, DetectorConfig, Proposal, SearchRegion};
use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry, Timestamp};
use crate::surface::AtslTdFrame;

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Search region size relative to the previous box.
    pub tau: f64,
    /// Minimum refine score for a proposal to be considered.
    pub lambda: f64,
    /// Below this IoU with the previous box the track is considered lost.
    pub mu: f64,
    /// Region growth per recovery frame.
    pub recovery_growth: f64,
    /// Refine score a re-detection needs to resume tracking.
    pub resume_score: f64,
    /// Candidates scoring below this fraction of the best remaining one
    /// are not selected, whether tracking or recovering.
    pub selection_ratio: f64,
    pub detector: DetectorConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau: 1.5,
            lambda: 0.7,
            mu: 0.3,
            recovery_growth: 1.5,
            resume_score: 0.7,
            selection_ratio: 0.9,
            detector: DetectorConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!(
                "tau must exceed 1, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config(format!(
                "mu must be in [0, 1), got {}",
                self.mu
            )));
        }
        if !(self.recovery_growth >= 1.0) {
            return Err(Error::Config("recovery growth must be at least 1".into()));
        }
        if !(self.resume_score >= 0.0) {
            return Err(Error::Config(
                "recovery resume score must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.selection_ratio) {
            return Err(Error::Config("selection ratio must be in [0, 1]".into()));
        }
        self.detector.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tracking,
    Recovering,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tracking => "tracking",
            Mode::Recovering => "recovering",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracking" => Ok(Mode::Tracking),
            "recovering" => Ok(Mode::Recovering),
            other => Err(Error::Format(format!("unknown tracking mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub frame_index: usize,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub bbox: BoundingBox,
    /// Best IoU against the previous box; for recovery frames, the best
    /// refine score against the last confident box.
    pub iou_prev: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u32,
    pub current: BoundingBox,
    pub last_confident: BoundingBox,
    pub mode: Mode,
    pub frames_in_recovery: u32,
    pub history: Vec<HistoryEntry>,
    /// When set, overwritten each frame with the raw detector output.
    pub proposals: Option<Vec<Proposal>>,
}

impl TrackState {
    pub fn new(id: u32, initial: BoundingBox) -> Self {
        Self {
            id,
            current: initial,
            last_confident: initial,
            mode: Mode::Tracking,
            frames_in_recovery: 0,
            history: Vec::new(),
            proposals: None,
        }
    }

    /// Restart from a known box, keeping the history.
    pub fn reinitialize(&mut self, bbox: BoundingBox) {
        self.current = bbox;
        self.last_confident = bbox;
        self.mode = Mode::Tracking;
        self.frames_in_recovery = 0;
    }

    fn record(&mut self, frame_index: usize, frame: &AtslTdFrame, score: f64) {
        self.history.push(HistoryEntry {
            frame_index,
            start_time: frame.start_time,
            end_time: frame.end_time,
            bbox: self.current,
            iou_prev: score,
            mode: self.mode,
        });
    }

    /// Process one frame in whichever mode the track is in.
    pub fn advance(&mut self, frame_index: usize, frame: &AtslTdFrame, cfg: &TrackerConfig) {
        match self.mode {
            Mode::Tracking => step(self, frame_index, frame, cfg),
            Mode::Recovering => recover_step(self, frame_index, frame, cfg),
        }
    }
}

/// Highest IoU against `prev`; ties go to the higher refine score, then the
/// earlier proposal.
pub fn select_by_iou(prev: &BoundingBox, refined: &[Proposal]) -> Option<(Proposal, f64)> {
    let mut best: Option<(Proposal, f64)> = None;
    for p in refined {
        let o = iou(prev, &p.bbox);
        let better = match &best {
            None => true,
            Some((b, bo)) => {
                o > *bo
                    || (o == *bo && p.refine_score.unwrap_or(0.0) > b.refine_score.unwrap_or(0.0))
            }
        };
        if better {
            best = Some((*p, o));
        }
    }
    best
}

/// Proposals whose detector score is within `ratio` of the best one.
fn strongest(mut proposals: Vec<Proposal>, ratio: f64) -> Vec<Proposal> {
    let top = proposals
        .iter()
        .map(|p| p.detector_score)
        .fold(0.0, f64::max);
    proposals.retain(|p| p.detector_score >= ratio * top);
    proposals
}

/// One tracking-mode frame.
pub fn step(state: &mut TrackState, frame_index: usize, frame: &AtslTdFrame, cfg: &TrackerConfig) {
    let prev = state.current;
    let region = SearchRegion::around(prev, cfg.tau, frame.geometry);
    let proposals = propose(frame, &region, &cfg.detector).proposals;
    if let Some(keep) = state.proposals.as_mut() {
        keep.clone_from(&proposals);
    }
    let refined = strongest(refine(&prev, &proposals, cfg.lambda), cfg.selection_ratio);
    let (winner, best) = match select_by_iou(&prev, &refined) {
        Some((p, o)) => (Some(p), o),
        None => (None, 0.0),
    };
    match winner {
        Some(p) if best >= cfg.mu => {
            state.current = p.bbox;
            state.last_confident = p.bbox;
            state.mode = Mode::Tracking;
        }
        _ => {
            state.current = state.last_confident;
            state.mode = Mode::Recovering;
            state.frames_in_recovery = 0;
        }
    }
    state.record(frame_index, frame, best);
}

/// Search region used on the `k`-th recovery frame (1-based).
pub fn recovery_region(
    last: BoundingBox,
    k: u32,
    cfg: &TrackerConfig,
    geometry: SensorGeometry,
) -> SearchRegion {
    // Past the sensor diagonal more growth changes nothing.
    let cap = 4.0 * (geometry.width.max(geometry.height) as f64) / last.w.min(last.h);
    let factor = (cfg.tau * cfg.recovery_growth.powi(k.min(64) as i32)).min(cap.max(cfg.tau));
    let mut region = SearchRegion::around(last, factor, geometry);
    if region.bounds.is_none() {
        region = SearchRegion::full_sensor(last, geometry);
    }
    region
}

/// One recovery-mode frame: re-detect in a growing region around the last
/// confident box and resume when a candidate matches its shape well enough.
pub fn recover_step(
    state: &mut TrackState,
    frame_index: usize,
    frame: &AtslTdFrame,
    cfg: &TrackerConfig,
) {
    state.frames_in_recovery += 1;
    let last = state.last_confident;
    let region = recovery_region(last, state.frames_in_recovery, cfg, frame.geometry);
    let proposals = propose(frame, &region, &cfg.detector).proposals;
    if let Some(keep) = state.proposals.as_mut() {
        keep.clone_from(&proposals);
    }
    let proposals = strongest(proposals, cfg.selection_ratio);
    let mut best: Option<(BoundingBox, f64)> = None;
    for p in &proposals {
        let s = refine_score(&last, &p.bbox);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((p.bbox, s));
        }
    }
    let score = best.map_or(0.0, |(_, s)| s);
    match best {
        Some((bbox, s)) if s >= cfg.resume_score => {
            state.current = bbox;
            state.last_confident = bbox;
            state.mode = Mode::Tracking;
            state.frames_in_recovery = 0;
        }
        _ => state.current = last,
    }
    state.record(frame_index, frame, score);
}

/// Start and end of a processed frame, for result files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameInfo {
    pub index: usize,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub event_count: u64,
    pub nzge: Option<f64>,
}

impl FrameInfo {
    pub fn of(index: usize, frame: &AtslTdFrame) -> Self {
        Self {
            index,
            start_time: frame.start_time,
            end_time: frame.end_time,
            event_count: frame.event_count,
            nzge: frame.nzge_at_cut,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub converter: AdaptiveConfig,
    pub tracker: TrackerConfig,
    /// Objects stepped in parallel when above 1.
    pub workers: usize,
    /// Also process the frame still open when the stream ends.
    pub include_trailing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            converter: AdaptiveConfig::default(),
            tracker: TrackerConfig::default(),
            workers: 1,
            include_trailing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frames: Vec<FrameInfo>,
    pub tracks: Vec<TrackState>,
}

/// Independent tracks sharing one frame stream.
pub struct MultiTracker {
    cfg: TrackerConfig,
    pool: Option<rayon::ThreadPool>,
    pub tracks: Vec<TrackState>,
}

impl MultiTracker {
    pub fn new(cfg: TrackerConfig, initial: &[(u32, BoundingBox)], workers: usize) -> Result<Self> {
        cfg.validate()?;
        let pool = if workers > 1 && initial.len() > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg,
            pool,
            tracks: initial
                .iter()
                .map(|&(id, b)| TrackState::new(id, b))
                .collect(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn process(&mut self, frame_index: usize, frame: &AtslTdFrame) {
        let cfg = &self.cfg;
        match &self.pool {
            Some(pool) => pool.install(|| {
                self.tracks
                    .par_iter_mut()
                    .for_each(|t| t.advance(frame_index, frame, cfg))
            }),
            None => self
                .tracks
                .iter_mut()
                .for_each(|t| t.advance(frame_index, frame, cfg)),
        }
    }
}

/// Convert a stream to adaptive frames and track every object through it.
/// `on_frame` sees each frame before the trackers do.
pub fn track_stream<I, F>(
    events: I,
    initial: &[(u32, BoundingBox)],
    cfg: &PipelineConfig,
    mut on_frame: F,
) -> Result<TrackOutput>
where
    I: IntoIterator<Item = Result<Event>>,
    F: FnMut(usize, &AtslTdFrame) -> Result<()>,
{
    let mut converter = AdaptiveConverter::new(cfg.converter)?;
    let mut tracker = MultiTracker::new(cfg.tracker.clone(), initial, cfg.workers)?;
    let mut frames = Vec::new();
    let mut handle = |frame: AtslTdFrame, frames: &mut Vec<FrameInfo>| -> Result<()> {
        let index = frames.len();
        on_frame(index, &frame)?;
        tracker.process(index, &frame);
        frames.push(FrameInfo::of(index, &frame));
        Ok(())
    };
    for e in events {
        if let Some(frame) = converter.push(&e?)? {
            handle(frame, &mut frames)?;
        }
    }
    if cfg.include_trailing {
        if let Some(frame) = converter.finish()? {
            handle(frame, &mut frames)?;
        }
    }
    Ok(TrackOutput {
        frames,
        tracks: tracker.tracks,
    })
}
