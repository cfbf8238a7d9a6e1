//! Objectness BCE plus Complete-IoU box regression.
//!
//! `CIoU(a, b) = IoU − ρ²/c² − α·v` where `ρ` is the center distance, `c`
//! the diagonal of the smallest enclosing box,
//! `v = 4/π²·(atan(w_b/h_b) − atan(w_a/h_a))²` and `α = v / (1 − IoU + v)`.
//! Gradients, including those through `α`, come from forward-mode dual
//! numbers over the predicted `(cx, cy, w, h)`.

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::decode::{decode_size, OFFSET_SCALE, OFFSET_SHIFT};
use super::TargetMap;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::ops::sigmoid;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub box_weight: f64,
    pub obj_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { box_weight: 5.0, obj_weight: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub box_loss: f64,
    pub obj_loss: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: [f64; 4],
}

impl Dual {
    fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 4] }
    }

    fn var(v: f64, k: usize) -> Self {
        let mut d = [0.0; 4];
        d[k] = 1.0;
        Self { v, d }
    }

    fn map(self, v: f64, dv: f64) -> Self {
        Self { v, d: self.d.map(|x| x * dv) }
    }

    fn max(self, o: Self) -> Self {
        if self.v >= o.v {
            self
        } else {
            o
        }
    }

    fn min(self, o: Self) -> Self {
        if self.v <= o.v {
            self
        } else {
            o
        }
    }

    fn atan(self) -> Self {
        self.map(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }

    fn sq(self) -> Self {
        self * self
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: std::array::from_fn(|k| self.d[k] + o.d[k]) }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(-self.v, -1.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: std::array::from_fn(|k| self.d[k] * o.v + self.v * o.d[k]) }
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self { v: self.v / o.v, d: std::array::from_fn(|k| (self.d[k] * o.v - self.v * o.d[k]) / (o.v * o.v)) }
    }
}

fn ciou_dual(a: [Dual; 4], b: &BBox) -> Dual {
    let half = Dual::constant(0.5);
    let [cx, cy, w, h] = a;
    let (ax1, ax2) = (cx - w * half, cx + w * half);
    let (ay1, ay2) = (cy - h * half, cy + h * half);
    let c = Dual::constant;
    let (bx1, bx2, by1, by2) = (c(b.x1()), c(b.x2()), c(b.y1()), c(b.y2()));
    let zero = c(0.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(zero);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(zero);
    let inter = iw * ih;
    let union = w * h + c(b.area()) - inter;
    let iou = inter / union;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let diag = cw.sq() + ch.sq();
    let rho = (cx - c(b.cx)).sq() + (cy - c(b.cy)).sq();
    let v = (c(b.w / b.h).atan() - (w / h).atan()).sq() * c(4.0 / (PI * PI));
    let denom = c(1.0) - iou + v;
    let alpha = if denom.v > 0.0 { v / denom } else { zero };
    iou - rho / diag - alpha * v
}

/// Complete IoU of two boxes with positive sizes.
pub fn ciou(a: &BBox, b: &BBox) -> Result<f64> {
    Ok(ciou_with_grad(a, b)?.0)
}

/// CIoU and its gradient with respect to `a = (cx, cy, w, h)`.
pub fn ciou_with_grad(a: &BBox, b: &BBox) -> Result<(f64, [f64; 4])> {
    if a.is_degenerate() || b.is_degenerate() {
        return Err(Error::Numeric(format!("degenerate box in ciou: {a:?} / {b:?}")));
    }
    let r = ciou_dual([Dual::var(a.cx, 0), Dual::var(a.cy, 1), Dual::var(a.w, 2), Dual::var(a.h, 3)], b);
    Ok((r.v, r.d))
}

/// Binary cross-entropy on a logit, stable for large `|z|`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Loss of a B×5×G×G raw grid and its gradient with respect to the grid.
///
/// Objectness BCE is summed over every cell and `1 − CIoU` over positive
/// cells; both sums are divided by the number of positive cells. A batch
/// without positives has zero box loss and its objectness is divided by
/// the cell count instead.
pub fn compute_loss<T: Real>(pred: &Tensor<T>, target: &TargetMap, w: LossWeights) -> Result<(LossParts, Tensor<T>)> {
    let (b, c, gh, gw) = pred.dims4()?;
    if c != 5 || b != target.batch || gh != target.grid || gw != target.grid {
        return Err(Error::shape(
            "compute_loss",
            format!("prediction {:?} vs targets {}×{}×{}", pred.shape(), target.batch, target.grid, target.grid),
        ));
    }
    let plane = gh * gw;
    let s = target.stride as f64;
    let d = pred.data();
    let at = |n: usize, k: usize, cell: usize| n * 5 * plane + k * plane + cell;
    let n_pos = target.positives();
    let norm = if n_pos > 0 { n_pos } else { b * plane } as f64;
    let mut grad = vec![0.0f64; d.len()];
    let (mut obj_sum, mut box_sum) = (0.0, 0.0);

    for n in 0..b {
        for cell in 0..plane {
            let (i, j) = (cell / gw, cell % gw);
            let tgt = target.get(n, i, j);
            let z = d[at(n, 4, cell)].as_f64();
            let y = if tgt.is_some() { 1.0 } else { 0.0 };
            obj_sum += bce_with_logits(z, y);
            grad[at(n, 4, cell)] = w.obj_weight * (sigmoid(z) - y) / norm;

            let Some(tgt) = tgt else { continue };
            let raw: [f64; 4] = std::array::from_fn(|k| d[at(n, k, cell)].as_f64());
            let (sx, sy) = (sigmoid(raw[0]), sigmoid(raw[1]));
            let pb = BBox::new(
                (j as f64 + OFFSET_SCALE * sx - OFFSET_SHIFT) * s,
                (i as f64 + OFFSET_SCALE * sy - OFFSET_SHIFT) * s,
                decode_size(raw[2], s),
                decode_size(raw[3], s),
            );
            let (ci, dci) = ciou_with_grad(&pb, tgt)?;
            box_sum += 1.0 - ci;
            // straight through the clamp, so collapsed sizes can recover
            let size_grad = |t: f64| decode_size(t, s);
            let dbox = [OFFSET_SCALE * s * sx * (1.0 - sx), OFFSET_SCALE * s * sy * (1.0 - sy), size_grad(raw[2]), size_grad(raw[3])];
            for k in 0..4 {
                grad[at(n, k, cell)] = -w.box_weight * dci[k] * dbox[k] / n_pos as f64;
            }
        }
    }

    let obj_loss = obj_sum / norm;
    let box_loss = if n_pos > 0 { box_sum / n_pos as f64 } else { 0.0 };
    let total = w.box_weight * box_loss + w.obj_weight * obj_loss;
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss (box {box_loss}, obj {obj_loss})")));
    }
    let parts = LossParts { box_loss, obj_loss, total };
    Ok((parts, Tensor::new(pred.shape().to_vec(), grad.into_iter().map(T::from_f64).collect())?))
}
