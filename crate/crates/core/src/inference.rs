//! Region-level inference: overlapping tiles, optional horizontal-flip
//! test-time augmentation, confidence and size filtering, and one pooled
//! greedy NMS pass.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{decode, Model, MODEL_STRIDE};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, Detection};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub tile: usize,
    pub overlap: usize,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    /// Detections with `min(width, height)` below this are dropped.
    pub min_size: f64,
    pub tta_flip: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { tile: 640, overlap: 64, conf_threshold: 0.45, nms_iou: 0.4, min_size: 35.0, tta_flip: true }
    }
}

impl InferenceConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.conf_threshold > 0.0 && self.conf_threshold < 1.0) {
            return bad(format!("conf_threshold must lie in (0, 1), got {}", self.conf_threshold));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return bad(format!("nms_iou must lie in (0, 1), got {}", self.nms_iou));
        }
        if !(self.min_size >= 0.0) {
            return bad(format!("min_size must be non-negative, got {}", self.min_size));
        }
        if self.tile == 0 || !self.tile.is_multiple_of(32) {
            return bad(format!("tile must be a positive multiple of 32, got {}", self.tile));
        }
        if self.overlap >= self.tile {
            return bad(format!("overlap {} must be smaller than tile {}", self.overlap, self.tile));
        }
        Ok(())
    }

    /// One-line summary of the protocol constants.
    pub fn header(&self) -> String {
        format!(
            "conf_threshold={} nms_iou={} min_size={}px tta_flip={} tile={} overlap={}",
            self.conf_threshold,
            self.nms_iou,
            self.min_size,
            if self.tta_flip { "on" } else { "off" },
            self.tile,
            self.overlap
        )
    }
}

/// Tile origins along one axis: step `tile − overlap`, last tile snapped to
/// the far edge.
pub fn tile_origins(extent: usize, tile: usize, overlap: usize) -> Result<Vec<usize>> {
    if extent < tile {
        return Err(Error::Data(format!("region extent {extent} is smaller than the {tile} px tile")));
    }
    let step = tile - overlap;
    let last = extent - tile;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    Ok(v)
}

/// Row-major `(x0, y0)` tile origins covering a `width × height` region.
pub fn tile_region(width: usize, height: usize, cfg: &InferenceConfig) -> Result<Vec<(usize, usize)>> {
    let xs = tile_origins(width, cfg.tile, cfg.overlap)?;
    let ys = tile_origins(height, cfg.tile, cfg.overlap)?;
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Greedy NMS order: descending score, ties by smaller x then smaller y.
fn nms_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.center_x.total_cmp(&b.center_x)).then(a.center_y.total_cmp(&b.center_y))
}

/// Confidence filter, size filter, then greedy NMS suppressing IoU ≥
/// `nms_iou`. Output is in keep order.
pub fn filter_and_nms(dets: &[Detection], cfg: &InferenceConfig) -> Vec<Detection> {
    let mut cand: Vec<Detection> =
        dets.iter().filter(|d| d.score >= cfg.conf_threshold && d.width.min(d.height) >= cfg.min_size).copied().collect();
    cand.sort_by(nms_order);
    let boxes: Vec<_> = cand.iter().map(Detection::bbox).collect();
    let mut suppressed = vec![false; cand.len()];
    let mut keep = Vec::new();
    for i in 0..cand.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(cand[i]);
        for j in i + 1..cand.len() {
            if !suppressed[j] && iou_unchecked(&boxes[i], &boxes[j]) >= cfg.nms_iou {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// 3×S×S tile cut from a 3×H×W image.
pub fn crop_tile(image: &Tensor<f32>, x0: usize, y0: usize, size: usize) -> Tensor<f32> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    debug_assert!(x0 + size <= w && y0 + size <= h);
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            let start = c * h * w + (y0 + y) * w + x0;
            data.extend_from_slice(&image.data()[start..start + size]);
        }
    }
    Tensor::new(vec![3, size, size], data).expect("tile shape")
}

/// Mirror of a C×H×W image along its width.
pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let w = s[s.len() - 1];
    let src = image.data();
    Tensor::from_fn(s.to_vec(), |i| {
        let (row, x) = (i / w, i % w);
        src[row * w + (w - 1 - x)]
    })
}

/// Maps a detection from a horizontally flipped tile back: `x' = tile − x`.
pub fn unflip(d: Detection, tile: usize) -> Detection {
    Detection { center_x: tile as f64 - d.center_x, ..d }
}

/// Decoded detections of one forward pass over a single 3×S×S tile.
fn tile_pass(model: &Model, tile: Tensor<f32>, conf: f64) -> Result<Vec<Detection>> {
    let s = tile.shape().to_vec();
    let batch = tile.reshape(vec![1, s[0], s[1], s[2]])?;
    let pred = model.predict(batch)?;
    Ok(decode(&pred, MODEL_STRIDE, conf)?.pop().unwrap_or_default())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionPrediction {
    pub detections: Vec<Detection>,
    pub tiles: usize,
    pub forward_passes: usize,
}

/// Runs the full protocol over one 3×H×W region image.
pub fn predict_region(model: &Model, image: &Tensor<f32>, cfg: &InferenceConfig) -> Result<RegionPrediction> {
    cfg.validate()?;
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("predict_region", format!("expected 3×H×W, got {s:?}")));
    }
    let origins = tile_region(s[2], s[1], cfg)?;
    let size = cfg.tile;
    let per_tile = par::map_indexed(origins.len(), |k| -> Result<Vec<Detection>> {
        let (x0, y0) = origins[k];
        let tile = crop_tile(image, x0, y0, size);
        let mut dets = if cfg.tta_flip {
            tile_pass(model, hflip(&tile), cfg.conf_threshold)?.into_iter().map(|d| unflip(d, size)).collect()
        } else {
            Vec::new()
        };
        dets.splice(0..0, tile_pass(model, tile, cfg.conf_threshold)?);
        Ok(dets.into_iter().map(|d| d.translate(x0 as f64, y0 as f64)).collect())
    });
    let mut pooled = Vec::new();
    for t in per_tile {
        pooled.extend(t?);
    }
    Ok(RegionPrediction {
        detections: filter_and_nms(&pooled, cfg),
        tiles: origins.len(),
        forward_passes: origins.len() * if cfg.tta_flip { 2 } else { 1 },
    })
}

pub const CSV_HEADER: [&str; 6] = ["region_id", "center_x", "center_y", "width", "height", "score"];

/// Detections as CSV rows with three decimals.
pub fn detections_csv(rows: &[(String, Detection)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (id, d) in rows {
        w.write_record([
            id.clone(),
            format!("{:.3}", d.center_x),
            format!("{:.3}", d.center_y),
            format!("{:.3}", d.width),
            format!("{:.3}", d.height),
            format!("{:.3}", d.score),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Deserialize)]
struct CsvRow {
    region_id: String,
    center_x: f64,
    center_y: f64,
    width: f64,
    height: f64,
    score: f64,
}

pub fn parse_detections_csv(text: &str) -> Result<Vec<(String, Detection)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Data(format!("csv: {e}")))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Data(format!("detections csv header must be `{}`", CSV_HEADER.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            let row: CsvRow = row.map_err(|e| Error::Data(format!("detections csv row {}: {e}", i + 1)))?;
            Ok((row.region_id, Detection::new(row.center_x, row.center_y, row.width, row.height, row.score)))
        })
        .collect()
}

pub fn load_detections_csv(path: &Path) -> Result<Vec<(String, Detection)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_csv(&text)
}
