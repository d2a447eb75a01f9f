//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;

/// Axis-aligned box with top-left corner `(x, y)` and size `w × h` pixels.
///
/// Coordinates are continuous: a box `(0, 0, 10, 10)` covers pixels `0..10`
/// on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite box ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Same center, both sides multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        Self {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        ix * iy
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    pub fn contains(&self, other: &Self) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersects_sensor(&self, geometry: SensorGeometry) -> bool {
        self.right() > 0.0
            && self.bottom() > 0.0
            && self.x < geometry.width as f64
            && self.y < geometry.height as f64
    }

    /// Clip to the sensor plane. `None` when nothing of the box remains.
    pub fn clip_to(&self, geometry: SensorGeometry) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(geometry.width as f64);
        let y1 = self.bottom().min(geometry.height as f64);
        (x1 > x0 && y1 > y0).then_some(Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// Linear interpolation of position and size, `s = 0` at `self`.
    pub fn lerp(&self, other: &Self, s: f64) -> Self {
        let mix = |a: f64, b: f64| a + (b - a) * s;
        Self {
            x: mix(self.x, other.x),
            y: mix(self.y, other.y),
            w: mix(self.w, other.w),
            h: mix(self.h, other.h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_sizes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn half_overlap() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0).unwrap();
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn clip_keeps_inside_part() {
        let g = SensorGeometry::new(240, 180).unwrap();
        let b = BoundingBox::new(-10.0, 170.0, 30.0, 30.0).unwrap();
        let c = b.clip_to(g).unwrap();
        assert_eq!((c.x, c.y, c.w, c.h), (0.0, 170.0, 20.0, 10.0));
        let off = BoundingBox::new(300.0, 0.0, 5.0, 5.0).unwrap();
        assert!(off.clip_to(g).is_none());
    }

    #[test]
    fn scaled_keeps_center() {
        let b = BoundingBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let s = b.scaled(1.5);
        assert_eq!(s.center(), b.center());
        assert_eq!((s.w, s.h), (45.0, 60.0));
    }
}
