//! Axis-aligned boxes in pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every annotation box, in pixels.
pub const ANNOTATION_BOX: f64 = 50.0;

/// Center/size box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// The 50×50 box centered on an annotated point.
    pub fn annotation(cx: f64, cy: f64) -> Self {
        Self::new(cx, cy, ANNOTATION_BOX, ANNOTATION_BOX)
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0) || ![self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x1().max(other.x1())).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y1().max(other.y1())).max(0.0);
        iw * ih
    }

    /// Overlap with the `[0, w) × [0, h)` rectangle.
    pub fn intersects_rect(&self, x0: f64, y0: f64, w: f64, h: f64) -> bool {
        self.x2() > x0 && self.x1() < x0 + w && self.y2() > y0 && self.y1() < y0 + h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }
}

/// A scored predicted box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64, score: f64) -> Self {
        Self { center_x, center_y, width, height, score }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.center_x, self.center_y, self.width, self.height)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self { center_x: self.center_x + dx, center_y: self.center_y + dy, ..*self }
    }
}

/// Intersection over union. Boxes must have positive width and height.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::Numeric(format!("degenerate box in iou: {a:?} / {b:?}")));
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    inter / (a.area() + b.area() - inter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::annotation(100.0, 100.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::annotation(300.0, 100.0)).unwrap(), 0.0);
        // 25 px apart: I = 25·50, U = 2·2500 − 1250
        let b = BBox::annotation(125.0, 100.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(iou(&a, &BBox::new(0.0, 0.0, 0.0, 5.0)).is_err());
    }
}
