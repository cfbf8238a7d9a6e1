use serde::{Deserialize, Serialize};

use super::matching::Flagged;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf1(tp: usize, fp: usize, fn_: usize) -> Prf1 {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Prf1 { precision, recall, f1 }
}

/// Cumulative (tp, fp) after each distinct score threshold, highest first.
/// Detections sharing a score enter together.
fn sweep(flagged: &[Flagged]) -> Vec<(usize, usize)> {
    let mut order: Vec<&Flagged> = flagged.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, f) in order.iter().enumerate() {
        if f.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        if order.get(k + 1).is_none_or(|n| n.score != f.score) {
            out.push((tp, fp));
        }
    }
    out
}

/// Area under the all-point interpolated precision envelope. Zero when
/// there is no ground truth.
pub fn average_precision(flagged: &[Flagged], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> =
        sweep(flagged).into_iter().map(|(tp, fp)| (tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64)).collect();
    // envelope: running max of precision from the right
    let mut env = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for k in (0..pts.len()).rev() {
        best = best.max(pts[k].1);
        env[k] = best;
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (k, &(r, _)) in pts.iter().enumerate() {
        ap += (r - prev_r) * env[k];
        prev_r = r;
    }
    ap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Froc {
    /// `(fppi, sensitivity)`, starting at the origin.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub const FPPI_MAX: f64 = 8.0;

/// Sensitivity against false positives per image over `[0, fppi_max]`.
/// A segment crossing `fppi_max` is cut there by linear interpolation; the
/// last sensitivity is held flat out to `fppi_max`.
pub fn froc(flagged: &[Flagged], total_gt: usize, n_images: usize, fppi_max: f64) -> Froc {
    let n = n_images.max(1) as f64;
    let sens = |tp: usize| if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
    let mut points = vec![(0.0, 0.0)];
    for (tp, fp) in sweep(flagged) {
        let p = (fp as f64 / n, sens(tp));
        let last = *points.last().expect("origin");
        if p.0 > fppi_max {
            let t = (fppi_max - last.0) / (p.0 - last.0);
            points.push((fppi_max, last.1 + t * (p.1 - last.1)));
            break;
        }
        points.push(p);
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    let &(x, y) = points.last().expect("origin");
    auc += (fppi_max - x) * y;
    Froc { points, auc }
}
