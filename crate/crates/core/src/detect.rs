//! Object proposals on time-surface frames and their refinement.
//!
//! A time-surface frame already is an edge map: pixels light up where
//! contours moved, brighter for more recent motion. Candidate boxes from a
//! scale/aspect ladder around the previous box are scored by the
//! recency-weighted contour mass they enclose, minus the mass in a thin band
//! just outside their border, per unit of perimeter. Integral images make
//! every candidate O(1).

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::event::SensorGeometry;
use crate::surface::AtslTdFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub max_boxes: usize,
    pub min_box_area: f64,
    /// Candidate areas relative to the previous box.
    pub area_scales: Vec<f64>,
    /// Candidate aspect ratios relative to the previous box.
    pub aspect_factors: Vec<f64>,
    pub nms_overlap: f64,
    /// Pixel weight is `(intensity / 255) ^ recency_exponent`.
    pub recency_exponent: f64,
    /// Width in pixels of the band outside a box that counts as straddling.
    pub straddle_width: u32,
    pub straddle_weight: f64,
    /// Drop candidates scoring below this fraction of the best candidate.
    pub min_score_ratio: f64,
    /// Scores are divided by the perimeter raised to this power.
    pub size_exponent: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_boxes: 1000,
            min_box_area: 100.0,
            // 2^(k/8) for k = -8..=8
            area_scales: (-8..=8).map(|k| 2f64.powf(k as f64 / 8.0)).collect(),
            aspect_factors: vec![0.5, 0.75, 1.0, 4.0 / 3.0, 2.0],
            nms_overlap: 0.8,
            recency_exponent: 4.0,
            straddle_width: 2,
            straddle_weight: 1.0,
            min_score_ratio: 0.9,
            size_exponent: 1.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_boxes == 0 {
            return Err(Error::Config(
                "detector.max_boxes must be at least 1".into(),
            ));
        }
        if !(self.min_box_area >= 1.0) {
            return Err(Error::Config(
                "detector.min_box_area must be at least 1".into(),
            ));
        }
        if self.area_scales.is_empty() || self.area_scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("detector scales must be positive".into()));
        }
        if self.aspect_factors.is_empty() || self.aspect_factors.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config(
                "detector aspect factors must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.nms_overlap) {
            return Err(Error::Config(
                "detector.nms_overlap must be in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_score_ratio) {
            return Err(Error::Config(
                "detector.min_score_ratio must be in [0, 1]".into(),
            ));
        }
        if !(self.recency_exponent > 0.0)
            || !(self.straddle_weight >= 0.0)
            || !(self.size_exponent >= 0.0)
        {
            return Err(Error::Config(
                "detector exponents and straddle weight are out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Where to look for the object in the next frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchRegion {
    /// Previous box; anchors the candidate ladder.
    pub reference: BoundingBox,
    /// Clipped search area, `None` if nothing is left on the sensor.
    pub bounds: Option<BoundingBox>,
}

impl SearchRegion {
    /// The previous box scaled by `factor` about its center, clipped.
    pub fn around(reference: BoundingBox, factor: f64, geometry: SensorGeometry) -> Self {
        Self {
            reference,
            bounds: reference.scaled(factor).clip_to(geometry),
        }
    }

    pub fn full_sensor(reference: BoundingBox, geometry: SensorGeometry) -> Self {
        Self {
            reference,
            bounds: Some(BoundingBox {
                x: 0.0,
                y: 0.0,
                w: geometry.width as f64,
                h: geometry.height as f64,
            }),
        }
    }

    /// Integer pixel bounds `[x0, x1) × [y0, y1)` inside the region.
    fn pixel_bounds(&self) -> Option<(i64, i64, i64, i64)> {
        let b = self.bounds?;
        let (x0, y0) = (b.x.ceil() as i64, b.y.ceil() as i64);
        let (x1, y1) = (b.right().floor() as i64, b.bottom().floor() as i64);
        (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub detector_score: f64,
    pub refine_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProposalSet {
    /// Sorted by detector score, best first.
    pub proposals: Vec<Proposal>,
    pub degenerate_region: bool,
}

/// Summed-area table over a window of the weight map.
struct Integral {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    table: Vec<f64>,
}

impl Integral {
    fn new(frame: &AtslTdFrame, lut: &[f64; 256], x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let (w, h) = (x1 - x0, y1 - y0);
        let stride = (w + 1) as usize;
        let mut table = vec![0.0; stride * (h + 1) as usize];
        let fw = frame.geometry.width as usize;
        for dy in 0..h as usize {
            let row = (y0 as usize + dy) * fw + x0 as usize;
            let on = &frame.on[row..row + w as usize];
            let off = &frame.off[row..row + w as usize];
            let mut run = 0.0;
            for dx in 0..w as usize {
                run += lut[on[dx] as usize] + lut[off[dx] as usize];
                table[(dy + 1) * stride + dx + 1] = table[dy * stride + dx + 1] + run;
            }
        }
        Self {
            x0,
            y0,
            w,
            h,
            table,
        }
    }

    /// Mass in `[x0, x1) × [y0, y1)` (sensor coordinates), clamped to the window.
    #[inline]
    fn sum(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
        let cx = |x: i64| (x - self.x0).clamp(0, self.w) as usize;
        let cy = |y: i64| (y - self.y0).clamp(0, self.h) as usize;
        let (a, b, c, d) = (cx(x0), cy(y0), cx(x1), cy(y1));
        let stride = (self.w + 1) as usize;
        self.table[d * stride + c] - self.table[b * stride + c] - self.table[d * stride + a]
            + self.table[b * stride + a]
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    score: f64,
}

/// Candidate boxes inside `region`, scored and suppressed.
pub fn propose(frame: &AtslTdFrame, region: &SearchRegion, cfg: &DetectorConfig) -> ProposalSet {
    let Some((rx0, ry0, rx1, ry1)) = region.pixel_bounds() else {
        return ProposalSet {
            proposals: Vec::new(),
            degenerate_region: true,
        };
    };
    let g = frame.geometry;
    let b = cfg.straddle_width as i64;
    let (wx0, wy0) = ((rx0 - b).max(0), (ry0 - b).max(0));
    let (wx1, wy1) = (
        (rx1 + b).min(g.width as i64),
        (ry1 + b).min(g.height as i64),
    );
    let mut lut = [0.0; 256];
    for (z, slot) in lut.iter_mut().enumerate() {
        *slot = (z as f64 / 255.0).powf(cfg.recency_exponent);
    }
    let integral = Integral::new(frame, &lut, wx0, wy0, wx1, wy1);

    let shapes = ladder(&region.reference, cfg, rx1 - rx0, ry1 - ry0);
    let score_of = |x: i64, y: i64, w: i64, h: i64| {
        let inner = integral.sum(x, y, x + w, y + h);
        let grown = integral.sum(x - b, y - b, x + w + b, y + h + b);
        (inner - cfg.straddle_weight * (grown - inner))
            / ((2 * (w + h)) as f64).powf(cfg.size_exponent)
    };
    let positions = |w: i64, h: i64| {
        let (sx, sy) = ((w / 16).max(1) as usize, (h / 16).max(1) as usize);
        (ry0..=ry1 - h)
            .step_by(sy)
            .flat_map(move |y| (rx0..=rx1 - w).step_by(sx).map(move |x| (x, y)))
    };

    let mut best = 0.0f64;
    for &(w, h) in &shapes {
        for (x, y) in positions(w, h) {
            best = best.max(score_of(x, y, w, h));
        }
    }
    if best <= 0.0 {
        return ProposalSet::default();
    }
    let floor = best * cfg.min_score_ratio;
    let mut candidates = Vec::new();
    for &(w, h) in &shapes {
        for (x, y) in positions(w, h) {
            let score = score_of(x, y, w, h);
            if score > 0.0 && score >= floor {
                candidates.push(Candidate { x, y, w, h, score });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.y, a.x, a.h, a.w).cmp(&(b.y, b.x, b.h, b.w)))
    });

    let mut kept: Vec<Proposal> = Vec::new();
    for c in candidates {
        if kept.len() >= cfg.max_boxes {
            break;
        }
        let bbox = BoundingBox {
            x: c.x as f64,
            y: c.y as f64,
            w: c.w as f64,
            h: c.h as f64,
        };
        if kept.iter().any(|k| k.bbox.iou(&bbox) > cfg.nms_overlap) {
            continue;
        }
        kept.push(Proposal {
            bbox,
            detector_score: c.score,
            refine_score: None,
        });
    }
    ProposalSet {
        proposals: kept,
        degenerate_region: false,
    }
}

/// Integer box sizes from the scale/aspect ladder that fit the region.
fn ladder(
    reference: &BoundingBox,
    cfg: &DetectorConfig,
    max_w: i64,
    max_h: i64,
) -> Vec<(i64, i64)> {
    let mut shapes = Vec::new();
    for &s in &cfg.area_scales {
        for &a in &cfg.aspect_factors {
            let w = (reference.w * (s * a).sqrt()).round().max(1.0) as i64;
            let h = (reference.h * (s / a).sqrt()).round().max(1.0) as i64;
            if (w * h) as f64 >= cfg.min_box_area && w <= max_w && h <= max_h {
                shapes.push((w, h));
            }
        }
    }
    shapes.sort_unstable();
    shapes.dedup();
    shapes
}

/// `x` below 1, `1 / x` from 1 up; peaks at `phi(1) = 1`.
pub fn phi(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(x));
    }
    Ok(phi_unchecked(x))
}

#[inline]
fn phi_unchecked(x: f64) -> f64 {
    if x < 1.0 {
        x
    } else {
        1.0 / x
    }
}

/// Agreement of area and aspect ratio between two boxes, in (0, 1].
pub fn refine_score(prev: &BoundingBox, cand: &BoundingBox) -> f64 {
    phi_unchecked(prev.area() / cand.area()) * phi_unchecked(prev.aspect() / cand.aspect())
}

/// Keep proposals whose refine score exceeds `lambda`, annotated with it.
pub fn refine(prev: &BoundingBox, proposals: &[Proposal], lambda: f64) -> Vec<Proposal> {
    proposals
        .iter()
        .filter_map(|p| {
            let s = refine_score(prev, &p.bbox);
            (s > lambda).then_some(Proposal {
                refine_score: Some(s),
                ..*p
            })
        })
        .collect()
}
