use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, Detection};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    CenterDistance,
    Iou,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub criterion: Criterion,
    pub distance_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { criterion: Criterion::CenterDistance, distance_threshold: 25.0, iou_threshold: 0.4 }
    }
}

impl MatchConfig {
    /// IoU ≥ `t` matching, as used for AP@0.5.
    pub fn iou(t: f64) -> Self {
        Self { criterion: Criterion::Iou, iou_threshold: t, ..Self::default() }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) || !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "match thresholds must be positive (distance {}, iou {})",
                self.distance_threshold, self.iou_threshold
            )));
        }
        Ok(())
    }

    /// Match quality if `d` may claim `g`; larger is better.
    fn quality(&self, d: &Detection, g: &BBox) -> Option<f64> {
        match self.criterion {
            Criterion::CenterDistance => {
                let dist = (d.center_x - g.cx).hypot(d.center_y - g.cy);
                (dist <= self.distance_threshold).then_some(-dist)
            }
            Criterion::Iou => {
                let db = d.bbox();
                if db.is_degenerate() || g.is_degenerate() {
                    return None;
                }
                let v = iou_unchecked(&db, g);
                (v >= self.iou_threshold).then_some(v)
            }
        }
    }
}

/// Detection scored and flagged against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub image: usize,
    pub score: f64,
    pub tp: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ImageMatch {
    /// TP flag per detection, in input order.
    pub tp: Vec<bool>,
    pub unmatched_gt: usize,
}

impl ImageMatch {
    pub fn tp_count(&self) -> usize {
        self.tp.iter().filter(|&&t| t).count()
    }

    pub fn fp_count(&self) -> usize {
        self.tp.len() - self.tp_count()
    }
}

/// Order in which detections claim ground truth: descending score, ties by
/// smaller x, then smaller y, then input position.
pub fn claim_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score.total_cmp(&da.score).then(da.center_x.total_cmp(&db.center_x)).then(da.center_y.total_cmp(&db.center_y)).then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching within one image. Each detection in claim
/// order takes the best unmatched ground truth satisfying the criterion
/// (nearest center or highest IoU; ties to the lower index).
pub fn match_image(dets: &[Detection], gts: &[BBox], cfg: &MatchConfig) -> ImageMatch {
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for k in claim_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            if let Some(q) = cfg.quality(&dets[k], gt) {
                if best.is_none_or(|(_, bq)| q > bq) {
                    best = Some((g, q));
                }
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[k] = true;
        }
    }
    ImageMatch { tp, unmatched_gt: taken.iter().filter(|&&t| !t).count() }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MatchResult {
    pub per_image: Vec<ImageMatch>,
    /// Every detection, ordered by image then input position.
    pub flagged: Vec<Flagged>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub total_gt: usize,
}

/// Matches every image independently and merges in image order.
pub fn match_all(dets: &[Vec<Detection>], gts: &[Vec<BBox>], cfg: &MatchConfig) -> Result<MatchResult> {
    if dets.len() != gts.len() {
        return Err(Error::Data(format!("{} detection lists for {} images", dets.len(), gts.len())));
    }
    let per_image = par::map_indexed(dets.len(), |i| match_image(&dets[i], &gts[i], cfg));
    let mut out = MatchResult::default();
    for (i, m) in per_image.iter().enumerate() {
        out.tp += m.tp_count();
        out.fp += m.fp_count();
        out.fn_ += m.unmatched_gt;
        out.total_gt += gts[i].len();
        out.flagged.extend(dets[i].iter().zip(&m.tp).map(|(d, &tp)| Flagged { image: i, score: d.score, tp }));
    }
    out.per_image = per_image;
    Ok(out)
}
