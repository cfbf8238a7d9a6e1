//! Geometric and color augmentation of square patches.
//!
//! Geometric transforms act on continuous pixel coordinates: a flip maps
//! `x` to `S − x`, one quarter turn maps `(x, y)` to `(y, S − x)`, and a
//! translation shifts by whole pixels with zero fill. Box sizes never
//! change; boxes whose centers leave `[0, S)` are dropped.

use rand::Rng as _;

use super::PatchSample;
use crate::geometry::BBox;
use crate::rng;
use crate::tensor::Tensor;

pub const MAX_SHIFT: i32 = 64;
pub const CONTRAST_RANGE: (f32, f32) = (0.7, 1.3);
pub const BRIGHTNESS_RANGE: (f32, f32) = (-0.2, 0.2);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GeometricParams {
    pub hflip: bool,
    pub vflip: bool,
    /// Quarter turns, 0..4.
    pub quarter_turns: u8,
    pub dx: i32,
    pub dy: i32,
}

impl GeometricParams {
    /// Each transform is switched on with probability 1/2.
    pub fn draw(seed: u64) -> Self {
        let mut r = rng::stream(seed, "augment-geometric", 0);
        let hflip = r.gen_bool(0.5);
        let vflip = r.gen_bool(0.5);
        let quarter_turns = if r.gen_bool(0.5) { r.gen_range(1..4) } else { 0 };
        let (dx, dy) = if r.gen_bool(0.5) { (r.gen_range(-MAX_SHIFT..=MAX_SHIFT), r.gen_range(-MAX_SHIFT..=MAX_SHIFT)) } else { (0, 0) };
        Self { hflip, vflip, quarter_turns, dx, dy }
    }

    /// Image of a continuous point.
    pub fn map_point(&self, mut x: f64, mut y: f64, size: f64) -> (f64, f64) {
        if self.hflip {
            x = size - x;
        }
        if self.vflip {
            y = size - y;
        }
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, size - x);
        }
        (x + self.dx as f64, y + self.dy as f64)
    }

    /// Pre-image of a continuous point.
    fn unmap_point(&self, x: f64, y: f64, size: f64) -> (f64, f64) {
        let (mut x, mut y) = (x - self.dx as f64, y - self.dy as f64);
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (size - y, x);
        }
        if self.vflip {
            y = size - y;
        }
        if self.hflip {
            x = size - x;
        }
        (x, y)
    }

    pub fn map_box(&self, b: &BBox, size: f64) -> BBox {
        let (cx, cy) = self.map_point(b.cx, b.cy, size);
        let (w, h) = if self.quarter_turns % 2 == 1 { (b.h, b.w) } else { (b.w, b.h) };
        BBox::new(cx, cy, w, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorParams {
    pub contrast: f32,
    pub brightness: f32,
}

impl Default for ColorParams {
    fn default() -> Self {
        Self { contrast: 1.0, brightness: 0.0 }
    }
}

impl ColorParams {
    pub fn draw(seed: u64) -> Self {
        let mut r = rng::stream(seed, "augment-color", 0);
        Self {
            contrast: r.gen_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1),
            brightness: r.gen_range(BRIGHTNESS_RANGE.0..=BRIGHTNESS_RANGE.1),
        }
    }
}

pub fn apply_geometric(sample: &PatchSample, p: &GeometricParams) -> PatchSample {
    let (c, h, w) = (sample.image.shape()[0], sample.image.shape()[1], sample.image.shape()[2]);
    assert_eq!(h, w, "geometric augmentation needs a square patch");
    let size = w as f64;
    let src = sample.image.data();
    let plane = h * w;
    let mut data = vec![0.0f32; src.len()];
    for r in 0..h {
        for col in 0..w {
            // pixel centers map to pixel centers under these transforms
            let (sx, sy) = p.unmap_point(col as f64 + 0.5, r as f64 + 0.5, size);
            let (sx, sy) = (sx.floor(), sy.floor());
            if sx < 0.0 || sy < 0.0 || sx >= size || sy >= size {
                continue;
            }
            let s_idx = sy as usize * w + sx as usize;
            for ch in 0..c {
                data[ch * plane + r * w + col] = src[ch * plane + s_idx];
            }
        }
    }
    let boxes: Vec<BBox> =
        sample.boxes.iter().map(|b| p.map_box(b, size)).filter(|b| b.cx >= 0.0 && b.cy >= 0.0 && b.cx < size && b.cy < size).collect();
    PatchSample { image: Tensor::new(sample.image.shape().to_vec(), data).expect("same shape"), positive: !boxes.is_empty(), boxes }
}

pub fn apply_color(sample: &PatchSample, p: &ColorParams) -> PatchSample {
    let mut image = sample.image.clone();
    let (a, b) = (f64::from(p.contrast), f64::from(p.brightness));
    for v in image.data_mut() {
        *v = (a * (f64::from(*v) - 0.5) + 0.5 + b).clamp(0.0, 1.0) as f32;
    }
    PatchSample { image, boxes: sample.boxes.clone(), positive: sample.positive }
}

pub fn augment_geometric(sample: &PatchSample, seed: u64) -> PatchSample {
    apply_geometric(sample, &GeometricParams::draw(seed))
}

pub fn augment_color(sample: &PatchSample, seed: u64) -> PatchSample {
    apply_color(sample, &ColorParams::draw(seed))
}
