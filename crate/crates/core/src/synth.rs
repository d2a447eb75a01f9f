//! Synthetic event streams from moving shapes, with exact ground truth.
//!
//! Shapes are filled; a pixel is covered when its center lies inside the
//! shape. Whenever coverage of a pixel changes the pixel fires events, so a
//! moving shape produces events along its leading and trailing contours and
//! a static one produces none.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::event::{Event, GroundTruthTrack, Polarity, SensorGeometry, Timestamp};

/// Ground truth sampling period in microseconds.
pub const GT_PERIOD_US: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned rectangle with its top-left corner at the position.
    Rectangle { w: f64, h: f64 },
    /// Polygon vertices relative to the position.
    Polygon { points: Vec<[f64; 2]> },
}

impl Shape {
    /// Extent relative to the position: (min x, min y, max x, max y).
    fn extent(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Rectangle { w, h } => (0.0, 0.0, *w, *h),
            Shape::Polygon { points } => points.iter().fold(
                (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
                |(a, b, c, d), &[x, y]| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Rectangle { w, h } => x >= 0.0 && x < *w && y >= 0.0 && y < *h,
            Shape::Polygon { points } => {
                let mut inside = false;
                let mut j = points.len() - 1;
                for i in 0..points.len() {
                    let ([xi, yi], [xj, yj]) = (points[i], points[j]);
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Rectangle { w, h } => *w > 0.0 && *h > 0.0 && w.is_finite() && h.is_finite(),
            Shape::Polygon { points } => {
                let (x0, y0, x1, y1) = self.extent();
                points.len() >= 3 && x1 > x0 && y1 > y0 && x0.is_finite() && y1.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Script(format!("degenerate shape {self:?}")))
        }
    }
}

/// Trajectory keyframe: position of the shape origin at time `t` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityRule {
    /// Shape brighter than the background: covered pixels turn On.
    #[default]
    Bright,
    Dark,
}

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScript {
    pub id: u32,
    pub shape: Shape,
    pub trajectory: Vec<Waypoint>,
    /// Events per contour pixel per pixel of travel.
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub polarity: PolarityRule,
    /// Time windows `[start, end)` in seconds during which the shape emits nothing.
    #[serde(default)]
    pub occlusions: Vec<[f64; 2]>,
}

impl ShapeScript {
    /// Origin position at `t` seconds; held constant outside the keyframes.
    pub fn position(&self, t: f64) -> (f64, f64) {
        let tr = &self.trajectory;
        let k = tr.partition_point(|w| w.t <= t);
        if k == 0 {
            return (tr[0].x, tr[0].y);
        }
        if k == tr.len() {
            let w = tr[k - 1];
            return (w.x, w.y);
        }
        let (a, b) = (tr[k - 1], tr[k]);
        let s = (t - a.t) / (b.t - a.t);
        (a.x + s * (b.x - a.x), a.y + s * (b.y - a.y))
    }

    /// Analytic bounding box at `t` seconds, unclipped.
    pub fn bbox_at(&self, t: f64) -> BoundingBox {
        let (x, y) = self.position(t);
        let (x0, y0, x1, y1) = self.shape.extent();
        BoundingBox {
            x: x + x0,
            y: y + y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    fn max_speed(&self) -> f64 {
        self.trajectory
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y) / (w[1].t - w[0].t))
            .fold(0.0, f64::max)
    }

    fn occluded(&self, t: f64) -> bool {
        self.occlusions.iter().any(|&[a, b]| t >= a && t < b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub width: u32,
    pub height: u32,
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Background events per second over the whole sensor.
    #[serde(default)]
    pub noise_rate: f64,
    pub shapes: Vec<ShapeScript>,
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let script: Self = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry()?;
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Script("duration must be positive".into()));
        }
        if !(self.noise_rate >= 0.0) {
            return Err(Error::Script("noise rate must be non-negative".into()));
        }
        for s in &self.shapes {
            s.shape.validate()?;
            if s.trajectory.is_empty() {
                return Err(Error::Script(format!("shape {} has no trajectory", s.id)));
            }
            if s.trajectory.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::Script(format!(
                    "shape {} trajectory times must increase",
                    s.id
                )));
            }
            if !(s.density >= 0.0) {
                return Err(Error::Script(format!(
                    "shape {} density must be non-negative",
                    s.id
                )));
            }
            let mut t = 0;
            while t as f64 <= self.duration * 1e6 {
                if s.bbox_at(t as f64 * 1e-6).clip_to(g).is_none() {
                    return Err(Error::Script(format!(
                        "shape {} leaves the sensor at {:.3}s",
                        s.id,
                        t as f64 * 1e-6
                    )));
                }
                t += GT_PERIOD_US;
            }
        }
        Ok(())
    }
}

/// A square of side `side` moving horizontally through the middle of the
/// sensor at `speed` pixels per second.
pub fn translating_square(
    geometry: SensorGeometry,
    side: f64,
    speed: f64,
    duration: f64,
    seed: u64,
) -> SceneScript {
    let y = (geometry.height as f64 - side) / 2.0;
    let x0 = 20.0;
    SceneScript {
        width: geometry.width,
        height: geometry.height,
        duration,
        seed,
        noise_rate: 0.0,
        shapes: vec![ShapeScript {
            id: 1,
            shape: Shape::Rectangle { w: side, h: side },
            trajectory: vec![
                Waypoint { t: 0.0, x: x0, y },
                Waypoint {
                    t: duration,
                    x: x0 + speed * duration,
                    y,
                },
            ],
            density: 1.0,
            polarity: PolarityRule::Bright,
            occlusions: Vec::new(),
        }],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub events: Vec<Event>,
    pub ground_truth: Vec<GroundTruthTrack>,
}

/// Covered pixel rectangle and mask for one shape position.
struct Coverage {
    x0: i64,
    y0: i64,
    w: i64,
    mask: Vec<bool>,
}

impl Coverage {
    fn at(shape: &Shape, px: f64, py: f64, g: SensorGeometry) -> Self {
        let (ex0, ey0, ex1, ey1) = shape.extent();
        let x0 = ((px + ex0 - 0.5).floor() as i64).max(0);
        let y0 = ((py + ey0 - 0.5).floor() as i64).max(0);
        let x1 = ((px + ex1 + 0.5).ceil() as i64).min(g.width as i64).max(x0);
        let y1 = ((py + ey1 + 0.5).ceil() as i64)
            .min(g.height as i64)
            .max(y0);
        let w = x1 - x0;
        let mut mask = Vec::with_capacity((w * (y1 - y0)) as usize);
        for v in y0..y1 {
            for u in x0..x1 {
                mask.push(shape.covers(u as f64 + 0.5 - px, v as f64 + 0.5 - py));
            }
        }
        Self { x0, y0, w, mask }
    }

    fn get(&self, u: i64, v: i64) -> bool {
        let (du, dv) = (u - self.x0, v - self.y0);
        if du < 0 || dv < 0 || du >= self.w {
            return false;
        }
        self.mask
            .get((dv * self.w + du) as usize)
            .copied()
            .unwrap_or(false)
    }

    fn rows(&self) -> i64 {
        if self.w == 0 {
            0
        } else {
            self.mask.len() as i64 / self.w
        }
    }
}

fn shape_events(
    s: &ShapeScript,
    g: SensorGeometry,
    duration_us: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let speed = s.max_speed();
    if speed == 0.0 || s.density == 0.0 {
        return Vec::new();
    }
    // Sub-pixel motion per step keeps contours one pixel thick.
    let dt = ((0.5 / speed) * 1e6).floor().clamp(1.0, 10_000.0) as i64;
    let whole = s.density.floor() as u32;
    let frac = s.density - whole as f64;
    let mut events = Vec::new();
    let (x, y) = s.position(0.0);
    let mut prev = Coverage::at(&s.shape, x, y, g);
    let mut t0 = 0;
    while t0 < duration_us {
        let t1 = (t0 + dt).min(duration_us);
        let (x, y) = s.position(t1 as f64 * 1e-6);
        let next = Coverage::at(&s.shape, x, y, g);
        if !s.occluded(t0 as f64 * 1e-6) {
            let u0 = prev.x0.min(next.x0);
            let v0 = prev.y0.min(next.y0);
            let u1 = (prev.x0 + prev.w).max(next.x0 + next.w);
            let v1 = (prev.y0 + prev.rows()).max(next.y0 + next.rows());
            for v in v0..v1 {
                for u in u0..u1 {
                    let (was, is) = (prev.get(u, v), next.get(u, v));
                    if was == is {
                        continue;
                    }
                    let p = match (is, s.polarity) {
                        (true, PolarityRule::Bright) | (false, PolarityRule::Dark) => Polarity::On,
                        _ => Polarity::Off,
                    };
                    let n = whole + u32::from(frac > 0.0 && rng.random_bool(frac));
                    for _ in 0..n {
                        let t = rng.random_range(t0..t1);
                        events.push(Event::new(u as u16, v as u16, p, Timestamp(t)));
                    }
                }
            }
        }
        prev = next;
        t0 = t1;
    }
    events
}

fn noise_events(
    rate: f64,
    g: SensorGeometry,
    duration_us: i64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Event>> {
    let mean = rate * duration_us as f64 * 1e-6;
    if mean <= 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(mean)
        .map_err(|e| Error::Script(format!("noise rate: {e}")))?
        .sample(rng) as usize;
    Ok((0..n)
        .map(|_| {
            let u = rng.random_range(0..g.width) as u16;
            let v = rng.random_range(0..g.height) as u16;
            let p = if rng.random_bool(0.5) {
                Polarity::On
            } else {
                Polarity::Off
            };
            Event::new(u, v, p, Timestamp(rng.random_range(0..duration_us)))
        })
        .collect())
}

/// Time-sorted events and 1 kHz ground truth for a scene; identical for
/// identical scripts.
pub fn generate(script: &SceneScript) -> Result<SynthOutput> {
    script.validate()?;
    let g = script.geometry()?;
    let duration_us = (script.duration * 1e6).round() as i64;
    let rng_for = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
        rng.set_stream(stream);
        rng
    };
    let per_shape: Vec<Vec<Event>> = script
        .shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| shape_events(s, g, duration_us, &mut rng_for(i as u64 + 1)))
        .collect();
    let mut events = noise_events(script.noise_rate, g, duration_us, &mut rng_for(0))?;
    for e in per_shape {
        events.extend(e);
    }
    events.sort_unstable_by_key(|e| (e.t, e.v, e.u, e.p as u8));

    let ground_truth = script
        .shapes
        .iter()
        .map(|s| {
            let entries = (0..=duration_us / GT_PERIOD_US)
                .filter_map(|k| {
                    let t = k * GT_PERIOD_US;
                    let b = s.bbox_at(t as f64 * 1e-6).clip_to(g)?;
                    Some((Timestamp(t), b))
                })
                .collect();
            GroundTruthTrack { id: s.id, entries }
        })
        .collect();
    Ok(SynthOutput {
        events,
        ground_truth,
    })
}
