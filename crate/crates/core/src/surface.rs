//! Two-channel time surface with linear time decay.
//!
//! Every event scales the whole surface by `t_{k-1} / t_k` before writing 255
//! at its own pixel. The product of those factors telescopes, so a pixel last
//! written at `s` renders as `255 · s / t_now` at read time. The surface keeps
//! one timestamp per pixel and channel and evaluates that ratio lazily, with
//! times measured from the start of the current frame plus one microsecond.

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry, Timestamp};

/// Added to both sides of the decay ratio so a frame starting at `t = 0`
/// (or an event at the frame start) never divides by zero.
pub const EPOCH_OFFSET_US: i64 = 1;

pub(crate) const EMPTY: i64 = i64::MIN;

/// The decay ratio for one frame at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Decay {
    origin: i64,
    den: i64,
    scale: f64,
}

impl Decay {
    pub fn new(frame_start: Timestamp, now: Timestamp) -> Self {
        let den = now.0 - frame_start.0 + EPOCH_OFFSET_US;
        debug_assert!(den > 0);
        Self {
            origin: frame_start.0,
            den,
            scale: 255.0 / den as f64,
        }
    }

    /// `round(255 · s' / now')`, half away from zero.
    #[inline]
    pub fn level(&self, set_time: i64) -> u8 {
        let num = set_time - self.origin + EPOCH_OFFSET_US;
        let q = num as f64 * self.scale;
        let frac = q - q.floor();
        if (frac - 0.5).abs() < 1e-6 {
            // Possible exact tie: settle it in integers.
            let num = num as i128;
            let den = self.den as i128;
            return ((510 * num + den) / (2 * den)) as u8;
        }
        (q + 0.5) as u8
    }
}

/// In-progress accumulator for one frame.
#[derive(Debug, Clone)]
pub struct Surface {
    geometry: SensorGeometry,
    /// Channel-major: `[channel * pixels + v * width + u]`.
    set_times: Vec<i64>,
    touched: Vec<u32>,
    frame_start: Timestamp,
    last_event_time: Timestamp,
    event_count: u64,
}

impl Surface {
    /// A zeroed surface whose frame starts at `t = 0`.
    pub fn new(geometry: SensorGeometry) -> Self {
        Self::starting_at(geometry, Timestamp(0))
    }

    pub fn starting_at(geometry: SensorGeometry, frame_start: Timestamp) -> Self {
        Self {
            geometry,
            set_times: vec![EMPTY; 2 * geometry.pixels()],
            touched: Vec::new(),
            frame_start,
            last_event_time: frame_start,
            event_count: 0,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn frame_start(&self) -> Timestamp {
        self.frame_start
    }

    pub fn last_event_time(&self) -> Timestamp {
        self.last_event_time
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn is_empty(&self) -> bool {
        self.event_count == 0
    }

    pub fn decay(&self) -> Decay {
        Decay::new(self.frame_start, self.last_event_time)
    }

    #[inline]
    fn index(&self, u: u32, v: u32, channel: usize) -> usize {
        channel * self.geometry.pixels() + v as usize * self.geometry.width as usize + u as usize
    }

    /// Raw set time in microseconds, `None` for pixels untouched this frame.
    #[inline]
    pub fn set_time(&self, u: u32, v: u32, channel: usize) -> Option<i64> {
        let t = self.set_times[self.index(u, v, channel)];
        (t != EMPTY).then_some(t)
    }

    pub fn apply_event(&mut self, e: &Event) -> Result<()> {
        if e.t < self.last_event_time {
            return Err(Error::Ordering {
                last: self.last_event_time.0,
                got: e.t.0,
            });
        }
        if !self.geometry.contains(e.u as u32, e.v as u32) {
            return Err(Error::OutOfBounds {
                line: 0,
                u: e.u as u32,
                v: e.v as u32,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        self.apply_unchecked(e);
        Ok(())
    }

    /// Caller guarantees ordering and bounds.
    #[inline]
    pub(crate) fn apply_unchecked(&mut self, e: &Event) {
        let idx = self.index(e.u as u32, e.v as u32, e.p.channel());
        if self.set_times[idx] == EMPTY {
            self.touched.push(idx as u32);
        }
        self.set_times[idx] = e.t.0;
        self.last_event_time = e.t;
        self.event_count += 1;
    }

    pub fn render_intensity(&self, u: u32, v: u32, channel: usize) -> u8 {
        match self.set_time(u, v, channel) {
            Some(s) => self.decay().level(s),
            None => 0,
        }
    }

    /// Both planes as 8-bit images, On first.
    pub fn render(&self) -> [Vec<u8>; 2] {
        let n = self.geometry.pixels();
        let mut planes = [vec![0u8; n], vec![0u8; n]];
        let decay = self.decay();
        for &idx in &self.touched {
            let idx = idx as usize;
            planes[idx / n][idx % n] = decay.level(self.set_times[idx]);
        }
        planes
    }

    /// The current state as a frame ending at the last event.
    pub fn snapshot(&self) -> Result<AtslTdFrame> {
        if self.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let [on, off] = self.render();
        Ok(AtslTdFrame {
            geometry: self.geometry,
            on,
            off,
            start_time: self.frame_start,
            end_time: self.last_event_time,
            event_count: self.event_count,
            nzge_at_cut: None,
        })
    }

    /// Emit the frame and restart accumulation at its end time.
    pub fn finalize(&mut self) -> Result<AtslTdFrame> {
        let frame = self.snapshot()?;
        self.reset(frame.end_time);
        Ok(frame)
    }

    /// Clear all pixels and start a new frame at `frame_start`.
    pub fn reset(&mut self, frame_start: Timestamp) {
        for &idx in &self.touched {
            self.set_times[idx as usize] = EMPTY;
        }
        self.touched.clear();
        self.frame_start = frame_start;
        self.last_event_time = frame_start;
        self.event_count = 0;
    }

    pub(crate) fn raw_set_times(&self) -> &[i64] {
        &self.set_times
    }
}

/// A finished two-channel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AtslTdFrame {
    pub geometry: SensorGeometry,
    pub on: Vec<u8>,
    pub off: Vec<u8>,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub event_count: u64,
    pub nzge_at_cut: Option<f64>,
}

impl AtslTdFrame {
    pub fn plane(&self, channel: usize) -> &[u8] {
        match channel {
            0 => &self.on,
            _ => &self.off,
        }
    }

    pub fn intensity(&self, u: u32, v: u32, channel: usize) -> u8 {
        self.plane(channel)[v as usize * self.geometry.width as usize + u as usize]
    }
}
