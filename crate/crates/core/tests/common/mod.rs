//! Brute-force reference implementations shared by the test targets.
#![allow(dead_code)]

use rand::Rng as _;
use sdf_yolo::eval::Flagged;
use sdf_yolo::geometry::Detection;
use sdf_yolo::inference::InferenceConfig;
use sdf_yolo::rng;
use sdf_yolo::tensor::{ConvGeom, Tensor};

pub fn brute_iou(a: &Detection, b: &Detection) -> f64 {
    let ix = (a.center_x + a.width / 2.0).min(b.center_x + b.width / 2.0) - (a.center_x - a.width / 2.0).max(b.center_x - b.width / 2.0);
    let iy =
        (a.center_y + a.height / 2.0).min(b.center_y + b.height / 2.0) - (a.center_y - a.height / 2.0).max(b.center_y - b.height / 2.0);
    let inter = ix.max(0.0) * iy.max(0.0);
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// O(n²) NMS: repeatedly take the best remaining box, drop its overlaps.
pub fn nms_oracle(dets: &[Detection], cfg: &InferenceConfig) -> Vec<Detection> {
    let mut left: Vec<Detection> =
        dets.iter().filter(|d| d.score >= cfg.conf_threshold && d.width >= cfg.min_size && d.height >= cfg.min_size).copied().collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (&left[k], &left[best]);
            if a.score > b.score || (a.score == b.score && (a.center_x, a.center_y) < (b.center_x, b.center_y)) {
                best = k;
            }
        }
        let keep = left.remove(best);
        left.retain(|d| brute_iou(&keep, d) < cfg.nms_iou);
        out.push(keep);
    }
    out
}

pub fn random_set(r: &mut rng::Rng) -> Vec<Detection> {
    let n = r.gen_range(0..=50);
    (0..n)
        .map(|_| {
            Detection::new(
                r.gen_range(0.0..300.0f64).round(),
                r.gen_range(0.0..300.0f64).round(),
                r.gen_range(20.0..80.0f64).round(),
                r.gen_range(20.0..80.0f64).round(),
                // coarse scores so ties occur
                f64::from(r.gen_range(0..20u8)) / 20.0,
            )
        })
        .collect()
}

/// Every distinct threshold, counted from scratch.
pub fn threshold_points(flags: &[Flagged]) -> Vec<(usize, usize)> {
    let mut scores: Vec<f64> = flags.iter().map(|f| f.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    scores
        .iter()
        .map(|&t| {
            let tp = flags.iter().filter(|f| f.score >= t && f.tp).count();
            let fp = flags.iter().filter(|f| f.score >= t && !f.tp).count();
            (tp, fp)
        })
        .collect()
}

/// Exact integral of the precision envelope over recall.
pub fn ap_oracle(flags: &[Flagged], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> =
        threshold_points(flags).into_iter().map(|(tp, fp)| (tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64)).collect();
    let mut recalls: Vec<f64> = pts.iter().map(|p| p.0).collect();
    recalls.push(0.0);
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut area = 0.0;
    for w in recalls.windows(2) {
        // envelope is constant on (w0, w1]
        let env = pts.iter().filter(|p| p.0 >= w[1]).map(|p| p.1).fold(0.0, f64::max);
        area += (w[1] - w[0]) * env;
    }
    area
}

/// Area under the piecewise-linear FROC curve, each segment clipped to
/// `[0, max]`, plus a flat tail.
pub fn froc_oracle(flags: &[Flagged], total_gt: usize, n_images: usize, max: f64) -> f64 {
    let mut pts = vec![(0.0, 0.0)];
    for (tp, fp) in threshold_points(flags) {
        let s = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        pts.push((fp as f64 / n_images as f64, s));
    }
    let mut area = 0.0;
    let mut reach = 0.0;
    let mut last_s = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= max {
            break;
        }
        let at = |x: f64| if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
        let xe = x1.min(max);
        area += (xe - x0) * (y0 + at(xe)) / 2.0;
        reach = xe;
        last_s = at(xe);
    }
    area + (max - reach) * last_s
}

/// Random flag set with coarse (tied) scores: `(flags, total_gt, images)`.
pub fn random_flags(r: &mut rng::Rng) -> (Vec<Flagged>, usize, usize) {
    let n_images = r.gen_range(1..4);
    let n = r.gen_range(0..=12);
    let flags: Vec<Flagged> = (0..n)
        .map(|_| Flagged { image: r.gen_range(0..n_images), score: f64::from(r.gen_range(0..8u8)) / 8.0 + 0.05, tp: r.gen_bool(0.5) })
        .collect();
    let tps = flags.iter().filter(|f| f.tp).count();
    (flags, tps + r.gen_range(0..10), n_images)
}

/// Direct sliding-window cross-correlation in f64.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, geom: ConvGeom) -> Tensor<f64> {
    let (b, cin, h, wd) = x.dims4().unwrap();
    let (cout, cg, k, _) = w.dims4().unwrap();
    let cog = cout / geom.groups;
    let ho = (h + 2 * geom.padding - k) / geom.stride + 1;
    let wo = (wd + 2 * geom.padding - k) / geom.stride + 1;
    assert_eq!(cg * geom.groups, cin);
    let mut out = Tensor::zeros(vec![b, cout, ho, wo]);
    for n in 0..b {
        for o in 0..cout {
            let g = o / cog;
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                    for c in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = (i * geom.stride + ky) as i64 - geom.padding as i64;
                                let xx = (j * geom.stride + kx) as i64 - geom.padding as i64;
                                if yy < 0 || xx < 0 || yy >= h as i64 || xx >= wd as i64 {
                                    continue;
                                }
                                acc += x.at(&[n, g * cg + c, yy as usize, xx as usize]) * w.at(&[o, c, ky, kx]);
                            }
                        }
                    }
                    out.set(&[n, o, i, j], acc);
                }
            }
        }
    }
    out
}
