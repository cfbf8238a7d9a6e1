//! Manifests, image I/O, balanced patch sampling, augmentation and the
//! synthetic dataset generator.

pub mod augment;
mod image;
mod manifest;
mod sampler;
pub mod synth;

pub use augment::{apply_color, apply_geometric, augment_color, augment_geometric, ColorParams, GeometricParams};
pub use image::{load_rgb, save_rgb, to_rgb8};
pub use manifest::{
    load_manifest, manifest_json, parse_manifest, save_manifest, split_census, Annotation, Dataset, DomainTag, RegionRecord, Split,
    IMAGE_DIR, MANIFEST_FILE,
};
pub use sampler::{PatchSample, PatchSampler, PatchWindow, EMPTY_SCAN_STEP};
pub use synth::{synth_dataset, write_dataset, SynthConfig};

use crate::error::Result;
use crate::par;
use crate::tensor::Tensor;

/// Side length of training patches and inference tiles.
pub const PATCH_SIZE: usize = 640;

/// Records of `split` with their decoded images, in manifest order.
pub fn load_regions(ds: &Dataset, split: Split) -> Result<Vec<(RegionRecord, Tensor<f32>)>> {
    let recs: Vec<&RegionRecord> = ds.split(split);
    par::map_indexed(recs.len(), |i| load_rgb(&ds.image_path(recs[i])))
        .into_iter()
        .zip(recs)
        .map(|(img, r)| Ok((r.clone(), img?)))
        .collect()
}

/// Stacks 3×S×S patches into a B×3×S×S batch.
pub fn stack(images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let shape = images.first().map(|t| t.shape().to_vec()).unwrap_or_else(|| vec![3, PATCH_SIZE, PATCH_SIZE]);
    let mut data = Vec::with_capacity(images.len() * shape.iter().product::<usize>());
    for t in images {
        if t.shape() != shape.as_slice() {
            return Err(crate::Error::shape("stack", format!("{:?} vs {:?}", t.shape(), shape)));
        }
        data.extend_from_slice(t.data());
    }
    let mut full = vec![images.len()];
    full.extend(shape);
    Tensor::new(full, data)
}
