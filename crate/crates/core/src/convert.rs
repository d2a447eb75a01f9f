//! Event-to-frame conversion: adaptive (NZGE-driven) and fixed time window.

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry, Timestamp};
use crate::nzge::{frame_entropy_map, ConfidenceInterval, GridSpec, IncrementalNzge};
use crate::surface::{AtslTdFrame, Surface};

/// Converts events to frames one at a time.
pub trait FrameCutter {
    /// Feed one event; returns a frame when this event completed one.
    fn push(&mut self, event: &Event) -> Result<Option<AtslTdFrame>>;

    /// Flush whatever is still accumulating at end of stream.
    fn finish(&mut self) -> Result<Option<AtslTdFrame>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub geometry: SensorGeometry,
    pub grid: GridSpec,
    pub interval: ConfidenceInterval,
    /// Events between NZGE checks.
    pub check_every: u32,
    /// Force a cut once a frame has been open this long (microseconds).
    pub max_open_us: Option<i64>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry::DAVIS240,
            grid: GridSpec::DAVIS240,
            interval: ConfidenceInterval::published_default(),
            check_every: 200,
            max_open_us: None,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate(self.geometry)?;
        if self.check_every == 0 {
            return Err(Error::Config("check cadence must be at least 1".into()));
        }
        if self.max_open_us.is_some_and(|d| d <= 0) {
            return Err(Error::Config("max open duration must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive time-surface conversion: a frame is cut as soon as its NZGE
/// reaches the lower bound of the calibrated interval.
///
/// The first frame starts at the first event. A frame whose events all share
/// its start time is never cut, so every frame has a positive duration.
#[derive(Debug, Clone)]
pub struct AdaptiveConverter {
    cfg: AdaptiveConfig,
    surface: Surface,
    meter: IncrementalNzge,
    since_check: u32,
    started: bool,
}

impl AdaptiveConverter {
    pub fn new(cfg: AdaptiveConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            surface: Surface::starting_at(cfg.geometry, Timestamp(0)),
            meter: IncrementalNzge::new(cfg.grid, cfg.geometry)?,
            cfg,
            since_check: 0,
            started: false,
        })
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.cfg
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    fn cut(&mut self, nzge_bits: Option<f64>) -> Result<AtslTdFrame> {
        let mut frame = self.surface.finalize()?;
        frame.nzge_at_cut = nzge_bits.map(|h| self.cfg.interval.from_bits(h));
        self.meter.reset();
        Ok(frame)
    }

    fn check(&mut self) -> Result<Option<AtslTdFrame>> {
        let s = &self.surface;
        if s.last_event_time() == s.frame_start() {
            return Ok(None);
        }
        if let Some(limit) = self.cfg.max_open_us {
            if s.last_event_time().0 - s.frame_start().0 >= limit {
                let h = self.meter.exact(&self.surface);
                return self.cut(h).map(Some);
            }
        }
        let estimate = self.meter.refresh(&self.surface);
        if !estimate.is_some_and(|h| self.cfg.interval.reached(h)) {
            return Ok(None);
        }
        // The estimate carries stale cells; confirm on the exact render.
        match self.meter.exact(&self.surface) {
            Some(h) if self.cfg.interval.reached(h) => self.cut(Some(h)).map(Some),
            _ => Ok(None),
        }
    }
}

impl FrameCutter for AdaptiveConverter {
    #[inline]
    fn push(&mut self, event: &Event) -> Result<Option<AtslTdFrame>> {
        if !self.started {
            self.surface.reset(event.t);
            self.started = true;
        }
        self.surface.apply_event(event)?;
        self.meter.observe(event.u as u32, event.v as u32);
        self.since_check += 1;
        if self.since_check < self.cfg.check_every {
            return Ok(None);
        }
        self.since_check = 0;
        self.check()
    }

    /// The open frame, which never reached the interval.
    fn finish(&mut self) -> Result<Option<AtslTdFrame>> {
        if self.surface.is_empty() || self.surface.last_event_time() == self.surface.frame_start() {
            return Ok(None);
        }
        let h = self.meter.exact(&self.surface);
        self.cut(h).map(Some)
    }
}

/// Fixed-time-window conversion with the same decay rendering. Windows are
/// anchored at the first event; windows without events produce no frame.
#[derive(Debug, Clone)]
pub struct FixedWindowConverter {
    surface: Surface,
    grid: Option<GridSpec>,
    window_us: i64,
    window_start: Option<i64>,
}

impl FixedWindowConverter {
    pub fn new(geometry: SensorGeometry, window_us: i64, grid: Option<GridSpec>) -> Result<Self> {
        if window_us <= 0 {
            return Err(Error::Config(format!(
                "time window must be positive, got {window_us}us"
            )));
        }
        if let Some(g) = grid {
            g.validate(geometry)?;
        }
        Ok(Self {
            surface: Surface::starting_at(geometry, Timestamp(0)),
            grid,
            window_us,
            window_start: None,
        })
    }

    fn emit(&mut self, window_start: i64) -> Result<AtslTdFrame> {
        let mut frame = self.surface.snapshot()?;
        frame.end_time = Timestamp(window_start + self.window_us);
        if let Some(grid) = self.grid {
            frame.nzge_at_cut = frame_entropy_map(&frame, grid)?.nzge();
        }
        Ok(frame)
    }
}

impl FrameCutter for FixedWindowConverter {
    fn push(&mut self, event: &Event) -> Result<Option<AtslTdFrame>> {
        let ws = *self.window_start.get_or_insert_with(|| {
            self.surface.reset(event.t);
            event.t.0
        });
        if event.t.0 < ws {
            return Err(Error::Ordering {
                last: ws,
                got: event.t.0,
            });
        }
        let skip = (event.t.0 - ws) / self.window_us;
        let mut out = None;
        if skip > 0 {
            if !self.surface.is_empty() {
                out = Some(self.emit(ws)?);
            }
            let next = ws + skip * self.window_us;
            self.window_start = Some(next);
            self.surface.reset(Timestamp(next));
        }
        self.surface.apply_event(event)?;
        Ok(out)
    }

    fn finish(&mut self) -> Result<Option<AtslTdFrame>> {
        match self.window_start {
            Some(ws) if !self.surface.is_empty() => {
                let frame = self.emit(ws)?;
                self.surface.reset(Timestamp(ws + self.window_us));
                self.window_start = Some(ws + self.window_us);
                Ok(Some(frame))
            }
            _ => Ok(None),
        }
    }
}

/// Run a cutter over a whole stream. With `include_open`, the trailing
/// partial frame is emitted too.
pub fn convert_all<C: FrameCutter>(
    cutter: &mut C,
    events: impl IntoIterator<Item = Result<Event>>,
    include_open: bool,
) -> Result<Vec<AtslTdFrame>> {
    let mut frames = Vec::new();
    for e in events {
        if let Some(f) = cutter.push(&e?)? {
            frames.push(f);
        }
    }
    if include_open {
        frames.extend(cutter.finish()?);
    }
    Ok(frames)
}

/// Fixed-window frames for a complete stream, last partial window included.
pub fn convert_fixed_time_window(
    events: &[Event],
    geometry: SensorGeometry,
    window_us: i64,
) -> Result<Vec<AtslTdFrame>> {
    let mut c = FixedWindowConverter::new(geometry, window_us, None)?;
    convert_all(&mut c, events.iter().copied().map(Ok), true)
}
