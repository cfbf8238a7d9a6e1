//! Box parameterization of the prediction grid.
//!
//! A cell `(i, j)` predicts its box center as
//! `(j + 4·σ(tx) − 1.5)·stride`, so the offset spans (−1.5, 2.5) cells and
//! each of the 3×3 cells around a ground truth can reach its center. At
//! `tx = 0` this is the cell center `(j + 0.5)·stride`. Sizes are
//! `exp(tw)·stride`, clamped to `[MIN_SIZE, MAX_SIZE]`.

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::tensor::ops::sigmoid;
use crate::tensor::{Real, Tensor};

pub const OFFSET_SCALE: f64 = 4.0;
pub const OFFSET_SHIFT: f64 = 1.5;
pub const MIN_SIZE: f64 = 1.0;
pub const MAX_SIZE: f64 = 640.0;

/// Cell-relative center offset for a raw `t`.
pub fn center_offset(t: f64) -> f64 {
    OFFSET_SCALE * sigmoid(t) - OFFSET_SHIFT
}

pub fn decode_size(t: f64, stride: f64) -> f64 {
    (t.exp() * stride).clamp(MIN_SIZE, MAX_SIZE)
}

/// Box predicted by cell `(i, j)` from raw `[tx, ty, tw, th]`.
pub fn decode_cell(raw: [f64; 4], i: usize, j: usize, stride: f64) -> BBox {
    BBox::new(
        (j as f64 + center_offset(raw[0])) * stride,
        (i as f64 + center_offset(raw[1])) * stride,
        decode_size(raw[2], stride),
        decode_size(raw[3], stride),
    )
}

/// Raw `[tx, ty, tw, th]` that cell `(i, j)` must emit to decode to `b`.
/// The center must lie strictly within the reachable offset range.
pub fn encode(b: &BBox, i: usize, j: usize, stride: f64) -> Result<[f64; 4]> {
    let inv = |o: f64| -> Result<f64> {
        let p = (o + OFFSET_SHIFT) / OFFSET_SCALE;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Numeric(format!("center offset {o} outside the reachable range")));
        }
        Ok((p / (1.0 - p)).ln())
    };
    if b.is_degenerate() {
        return Err(Error::Numeric(format!("cannot encode degenerate box {b:?}")));
    }
    Ok([inv(b.cx / stride - j as f64)?, inv(b.cy / stride - i as f64)?, (b.w / stride).ln(), (b.h / stride).ln()])
}

/// Detections per image from a B×5×G×G raw grid, in row-major cell order.
pub fn decode<T: Real>(pred: &Tensor<T>, stride: usize, conf_threshold: f64) -> Result<Vec<Vec<Detection>>> {
    let (b, c, gh, gw) = pred.dims4()?;
    if c != 5 {
        return Err(Error::shape("decode", format!("expected 5 channels, got {c}")));
    }
    let plane = gh * gw;
    let s = stride as f64;
    let d = pred.data();
    Ok((0..b)
        .map(|n| {
            let base = n * 5 * plane;
            let ch = |k: usize, cell: usize| d[base + k * plane + cell].as_f64();
            let mut out = Vec::new();
            for cell in 0..plane {
                let score = sigmoid(ch(4, cell));
                if score < conf_threshold {
                    continue;
                }
                let bx = decode_cell([ch(0, cell), ch(1, cell), ch(2, cell), ch(3, cell)], cell / gw, cell % gw, s);
                out.push(Detection::new(bx.cx, bx.cy, bx.w, bx.h, score));
            }
            out
        })
        .collect())
}
