//! Balanced patch sampling: every batch is half positive windows (at least
//! one annotation, fully inside) and half empty windows (no annotation box
//! touching the window).

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{RegionRecord, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;
use crate::tensor::Tensor;

/// Image patch with its boxes in patch coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// 3×S×S, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub boxes: Vec<BBox>,
    pub positive: bool,
}

/// Window placement before cropping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchWindow {
    pub region: usize,
    pub x0: usize,
    pub y0: usize,
    pub positive: bool,
}

/// Grid step when enumerating empty windows.
pub const EMPTY_SCAN_STEP: usize = 32;

pub struct PatchSampler {
    regions: Vec<(RegionRecord, Tensor<f32>)>,
    patch: usize,
    /// Regions with at least one annotation.
    annotated: Vec<usize>,
    empty: Vec<PatchWindow>,
}

fn scan_origins(extent: usize, patch: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(EMPTY_SCAN_STEP).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

/// `n` indices into `0..pool`, concatenating fresh shuffles as needed.
fn draw_cycled(r: &mut rng::Rng, pool: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut perm: Vec<usize> = (0..pool).collect();
        perm.shuffle(r);
        out.extend(perm.into_iter().take(n - out.len()));
    }
    out
}

impl PatchSampler {
    pub fn new(regions: Vec<(RegionRecord, Tensor<f32>)>) -> Result<Self> {
        Self::with_patch_size(regions, PATCH_SIZE)
    }

    pub fn with_patch_size(regions: Vec<(RegionRecord, Tensor<f32>)>, patch: usize) -> Result<Self> {
        let mut annotated = Vec::new();
        let mut empty = Vec::new();
        for (k, (rec, img)) in regions.iter().enumerate() {
            if img.shape() != [3, rec.height, rec.width] {
                return Err(Error::Data(format!(
                    "`{}`: image is {:?}, manifest says {}×{}",
                    rec.image_path,
                    img.shape(),
                    rec.width,
                    rec.height
                )));
            }
            if rec.width < patch || rec.height < patch {
                return Err(Error::Data(format!(
                    "`{}`: region {}×{} smaller than the {patch} px patch",
                    rec.image_path, rec.width, rec.height
                )));
            }
            if !rec.annotations.is_empty() {
                annotated.push(k);
            }
            let boxes = rec.boxes();
            for &y0 in &scan_origins(rec.height, patch) {
                for &x0 in &scan_origins(rec.width, patch) {
                    let touched = boxes.iter().any(|b| b.intersects_rect(x0 as f64, y0 as f64, patch as f64, patch as f64));
                    if !touched {
                        empty.push(PatchWindow { region: k, x0, y0, positive: false });
                    }
                }
            }
        }
        if annotated.is_empty() {
            return Err(Error::Data("no annotated location to sample positive patches from".into()));
        }
        if empty.is_empty() {
            return Err(Error::Data("no annotation-free window to sample empty patches from".into()));
        }
        Ok(Self { regions, patch, annotated, empty })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn regions(&self) -> &[(RegionRecord, Tensor<f32>)] {
        &self.regions
    }

    pub fn empty_candidates(&self) -> usize {
        self.empty.len()
    }

    /// Window whose random jitter keeps `anchor` fully inside.
    fn positive_window(&self, r: &mut rng::Rng, k: usize, anchor: &BBox) -> PatchWindow {
        let rec = &self.regions[k].0;
        let pick = |r: &mut rng::Rng, lo_edge: f64, hi_edge: f64, extent: usize| {
            let max0 = (extent - self.patch) as i64;
            let lo = ((hi_edge - self.patch as f64).ceil() as i64).max(0);
            let hi = (lo_edge.floor() as i64).min(max0);
            if lo <= hi {
                r.gen_range(lo..=hi) as usize
            } else {
                // box wider than what fits; center it instead
                (((lo_edge + hi_edge) / 2.0 - self.patch as f64 / 2.0).round() as i64).clamp(0, max0) as usize
            }
        };
        PatchWindow {
            region: k,
            x0: pick(r, anchor.x1(), anchor.x2(), rec.width),
            y0: pick(r, anchor.y1(), anchor.y2(), rec.height),
            positive: true,
        }
    }

    /// Placements for one batch: `batch_size/2` positives then as many
    /// empties. Positive regions and empty windows are drawn without
    /// replacement, reshuffling once a pool is exhausted; the anchor
    /// annotation is uniform within its region.
    pub fn sample_windows(&self, batch_size: usize, seed: u64) -> Result<Vec<PatchWindow>> {
        if batch_size == 0 || !batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("batch_size must be even and positive, got {batch_size}")));
        }
        let half = batch_size / 2;
        let mut r = rng::stream(seed, "sample-batch", 0);
        let mut out = Vec::with_capacity(batch_size);
        for k in draw_cycled(&mut r, self.annotated.len(), half) {
            let k = self.annotated[k];
            let anns = &self.regions[k].0.annotations;
            let anchor = anns[r.gen_range(0..anns.len())].bbox();
            out.push(self.positive_window(&mut r, k, &anchor));
        }
        for e in draw_cycled(&mut r, self.empty.len(), half) {
            out.push(self.empty[e]);
        }
        Ok(out)
    }

    /// Boxes whose centers fall inside the window, in window coordinates.
    pub fn window_boxes(&self, w: &PatchWindow) -> Vec<BBox> {
        let rec = &self.regions[w.region].0;
        let (x0, y0, s) = (w.x0 as f64, w.y0 as f64, self.patch as f64);
        rec.boxes()
            .into_iter()
            .filter(|b| b.cx >= x0 && b.cy >= y0 && b.cx < x0 + s && b.cy < y0 + s)
            .map(|b| b.translate(-x0, -y0))
            .collect()
    }

    pub fn crop(&self, w: &PatchWindow) -> PatchSample {
        let img = &self.regions[w.region].1;
        let (h, width) = (img.shape()[1], img.shape()[2]);
        let s = self.patch;
        let mut data = Vec::with_capacity(3 * s * s);
        for c in 0..3 {
            for y in 0..s {
                let start = c * h * width + (w.y0 + y) * width + w.x0;
                data.extend_from_slice(&img.data()[start..start + s]);
            }
        }
        let boxes = self.window_boxes(w);
        PatchSample { image: Tensor::new(vec![3, s, s], data).expect("patch shape"), positive: !boxes.is_empty(), boxes }
    }

    pub fn sample_batch(&self, batch_size: usize, seed: u64) -> Result<Vec<PatchSample>> {
        Ok(self.sample_windows(batch_size, seed)?.iter().map(|w| self.crop(w)).collect())
    }
}
