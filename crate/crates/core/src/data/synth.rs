//! Synthetic stand-in for annotated region images: a stained-tissue-like
//! background, dark elliptical blobs as the annotated objects, and
//! distractors that have the right size but the wrong color, or the right
//! color but the wrong size.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::image::{save_rgb, to_rgb8};
use super::manifest::{save_manifest, Annotation, DomainTag, RegionRecord, Split, IMAGE_DIR, MANIFEST_FILE};
use super::PATCH_SIZE;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_regions: usize,
    pub region_size: usize,
    pub blobs_per_region: usize,
    /// The last `empty_regions` regions carry no blobs.
    pub empty_regions: usize,
    pub distractors_per_region: usize,
    /// Cycled over regions in order.
    pub splits: Vec<Split>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_regions: 8,
            region_size: 1024,
            blobs_per_region: 4,
            empty_regions: 0,
            distractors_per_region: 6,
            splits: vec![Split::Train, Split::Train, Split::Val, Split::Test],
        }
    }
}

/// Domains cycled over regions.
pub const SYNTH_DOMAINS: [(&str, &str); 2] = [("synth-a", "tumor1"), ("synth-b", "tumor2")];

const BLOB_COLOR: [f32; 3] = [0.28, 0.13, 0.38];
const BROWN: [f32; 3] = [0.58, 0.38, 0.22];
const BACKGROUND: [f32; 3] = [0.92, 0.76, 0.84];
const EDGE_MARGIN: f64 = 40.0;
const BLOB_SPACING: f64 = 100.0;
const DISTRACTOR_SPACING: f64 = 60.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region_size < PATCH_SIZE {
            return Err(Error::Config(format!("region_size {} is below the {PATCH_SIZE} px patch size", self.region_size)));
        }
        if self.empty_regions > self.n_regions {
            return Err(Error::Config("empty_regions exceeds n_regions".into()));
        }
        if self.splits.is_empty() {
            return Err(Error::Config("splits must not be empty".into()));
        }
        Ok(())
    }
}

struct Canvas {
    size: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn background(size: usize, r: &mut rng::Rng) -> Self {
        // bilinear value noise on a 64 px lattice plus per-pixel grain
        let cells = size / 64 + 2;
        let lattice: Vec<f32> = (0..cells * cells).map(|_| r.gen_range(-1.0..1.0)).collect();
        let plane = size * size;
        let mut data = vec![0.0f32; 3 * plane];
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f32 / 64.0, y as f32 / 64.0);
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f32, fy - iy as f32);
                let at = |i: usize, j: usize| lattice[j * cells + i];
                let smooth = (at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx) * (1.0 - ty)
                    + (at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx) * ty;
                let grain: f32 = r.gen_range(-0.02..0.02);
                for c in 0..3 {
                    data[c * plane + y * size + x] = BACKGROUND[c] + 0.05 * smooth + grain;
                }
            }
        }
        Self { size, data }
    }

    /// Soft-edged ellipse blended over the canvas.
    fn ellipse(&mut self, cx: f64, cy: f64, a: f64, b: f64, angle: f64, color: [f32; 3]) {
        let plane = self.size * self.size;
        let reach = a.max(b) + 2.0;
        let (cos, sin) = (angle.cos(), angle.sin());
        let lo = |v: f64| (v - reach).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + reach).ceil() as usize).min(self.size - 1);
        for y in lo(cy)..=hi(cy) {
            for x in lo(cx)..=hi(cx) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                let d = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let alpha = ((1.0 - d) * a.min(b) / 1.5 + 0.5).clamp(0.0, 1.0) as f32;
                if alpha > 0.0 {
                    for (c, &col) in color.iter().enumerate() {
                        let p = &mut self.data[c * plane + y * self.size + x];
                        *p = *p * (1.0 - alpha) + col * alpha;
                    }
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let t = Tensor::new(vec![3, self.size, self.size], self.data).expect("canvas shape");
        // round-trip through 8 bits so memory matches the PNG on disk
        let (_, _, bytes) = to_rgb8(&t).expect("rgb");
        let plane = self.size * self.size;
        Tensor::from_fn(vec![3, self.size, self.size], |i| {
            let (c, p) = (i / plane, i % plane);
            f32::from(bytes[p * 3 + c]) / 255.0
        })
    }
}

fn place(r: &mut rng::Rng, size: f64, taken: &[(f64, f64)], spacing: f64) -> Option<(f64, f64)> {
    for _ in 0..1000 {
        let p = (r.gen_range(EDGE_MARGIN..size - EDGE_MARGIN).round(), r.gen_range(EDGE_MARGIN..size - EDGE_MARGIN).round());
        if taken.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= spacing) {
            return Some(p);
        }
    }
    None
}

/// One region: its annotation centers and its 3×S×S image.
pub fn synth_region(seed: u64, index: usize, size: usize, blobs: usize, distractors: usize) -> (Vec<Annotation>, Tensor<f32>) {
    let mut r = rng::stream(seed, "synth-region", index as u64);
    let mut canvas = Canvas::background(size, &mut r);
    let s = size as f64;
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..blobs {
        let Some(p) = place(&mut r, s, &centers, BLOB_SPACING) else { break };
        centers.push(p);
    }
    let mut occupied = centers.clone();
    for k in 0..distractors {
        let Some(p) = place(&mut r, s, &occupied, DISTRACTOR_SPACING) else { break };
        occupied.push(p);
        let angle = r.gen_range(0.0..std::f64::consts::PI);
        if k % 2 == 0 {
            // right size, wrong color
            let (a, b) = (r.gen_range(15.0..22.0), r.gen_range(15.0..22.0));
            canvas.ellipse(p.0, p.1, a, b, angle, BROWN);
        } else {
            // right color, wrong size
            let (a, b) = (r.gen_range(4.0..7.0), r.gen_range(4.0..7.0));
            canvas.ellipse(p.0, p.1, a, b, angle, BLOB_COLOR);
        }
    }
    for &(x, y) in &centers {
        let angle = r.gen_range(0.0..std::f64::consts::PI);
        let (a, b) = (r.gen_range(15.0..22.5), r.gen_range(15.0..22.5));
        canvas.ellipse(x, y, a, b, angle, BLOB_COLOR);
    }
    let annotations = centers.into_iter().map(|(x, y)| Annotation { x, y }).collect();
    (annotations, canvas.into_tensor())
}

/// Records (image paths under `images/`) and the matching images.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Vec<RegionRecord>, Vec<Tensor<f32>>)> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.n_regions);
    let mut images = Vec::with_capacity(cfg.n_regions);
    let with_blobs = cfg.n_regions - cfg.empty_regions;
    for k in 0..cfg.n_regions {
        let blobs = if k < with_blobs { cfg.blobs_per_region } else { 0 };
        let (annotations, image) = synth_region(cfg.seed, k, cfg.region_size, blobs, cfg.distractors_per_region);
        let (dataset, tumor) = SYNTH_DOMAINS[k % SYNTH_DOMAINS.len()];
        records.push(RegionRecord {
            image_path: format!("{IMAGE_DIR}/region_{k:03}.png"),
            width: cfg.region_size,
            height: cfg.region_size,
            annotations,
            domain: DomainTag::new(dataset, tumor),
            split: cfg.splits[k % cfg.splits.len()],
        });
        images.push(image);
    }
    Ok((records, images))
}

/// Writes `manifest.json` and `images/*.png` under `out`.
pub fn write_dataset(cfg: &SynthConfig, out: &Path) -> Result<Vec<RegionRecord>> {
    let (records, images) = synth_dataset(cfg)?;
    let dir = out.join(IMAGE_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (rec, img) in records.iter().zip(&images) {
        save_rgb(&out.join(&rec.image_path), img)?;
    }
    save_manifest(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}
