//! Training loop with balanced patch batches, per-epoch validation AP@0.5
//! and best-checkpoint retention.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{augment_color, augment_geometric, load_regions, stack, Dataset, PatchSample, PatchSampler, RegionRecord, Split};
use crate::detector::{assign_targets, attach_loss, LossParts, LossWeights, Model, MODEL_STRIDE};
use crate::error::{Error, Result};
use crate::eval::{average_precision, match_all, MatchConfig};
use crate::geometry::{BBox, Detection};
use crate::inference::{predict_region, InferenceConfig};
use crate::par;
use crate::rng::derive_seed;
use crate::tensor::{sgd_step, Checkpoint, Graph, SgdConfig, Tensor};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const BEST_MARKER: &str = "best";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub input_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub steps_per_epoch: usize,
    pub augment: bool,
    /// Split scored after every epoch.
    pub val_split: Split,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            input_size: 640,
            lr: 0.01,
            weight_decay: 0.0005,
            momentum: 0.937,
            seed: 0,
            steps_per_epoch: 32,
            augment: true,
            val_split: Split::Val,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch_size must be even and positive, got {}", self.batch_size));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return bad(format!("input_size must be a positive multiple of 32, got {}", self.input_size));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be positive".into());
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub total: f64,
    pub val_ap50: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// `(epoch, val_ap50)` of the retained checkpoint; epoch 0 means the
    /// initial weights.
    pub best: (usize, Option<f64>),
    pub best_checkpoint: Checkpoint,
}

/// One SGD step on a batch of patches. `step` only labels errors.
pub fn train_step(model: &mut Model, batch: &[PatchSample], cfg: &TrainConfig, step: usize) -> Result<LossParts> {
    let images: Vec<&Tensor<f32>> = batch.iter().map(|p| &p.image).collect();
    let boxes: Vec<Vec<BBox>> = batch.iter().map(|p| p.boxes.clone()).collect();
    let x = stack(&images)?;
    let grid = x.shape()[2] / MODEL_STRIDE;
    let target = assign_targets(&boxes, grid, MODEL_STRIDE)?;

    let mut g = Graph::new(true);
    let xv = g.input(x);
    // non-finite weights surface in the forward pass before the loss
    let (loss, parts) = match model.net.forward(&mut g, &model.params, xv).and_then(|pred| attach_loss(&mut g, pred, &target, cfg.loss)) {
        Err(Error::Numeric(_)) => return Err(Error::NonFiniteLoss { step }),
        r => r?,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let grads = g.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate_grads(&g, &grads);
    let updates = g.take_updates();
    sgd_step(&mut model.params, &cfg.sgd())?;
    model.params.apply_updates(updates)?;
    Ok(parts)
}

/// The batch for global step `step`: sampled windows, then geometric and
/// color augmentation with per-sample seeds.
pub fn assemble_batch(sampler: &PatchSampler, cfg: &TrainConfig, step: usize) -> Result<Vec<PatchSample>> {
    let windows = sampler.sample_windows(cfg.batch_size, derive_seed(cfg.seed, "batch", step as u64))?;
    Ok(par::map_indexed(windows.len(), |k| {
        let p = sampler.crop(&windows[k]);
        if !cfg.augment {
            return p;
        }
        let id = (step * cfg.batch_size + k) as u64;
        let p = augment_geometric(&p, derive_seed(cfg.seed, "augment-geometric", id));
        augment_color(&p, derive_seed(cfg.seed, "augment-color", id))
    }))
}

/// Inference settings used for validation: the default protocol without
/// flip TTA, tiled at the model input size.
pub fn validation_protocol(model: &Model) -> InferenceConfig {
    InferenceConfig { tile: model.config.input_size, tta_flip: false, ..InferenceConfig::default() }
}

/// Per-region detections under `cfg`.
pub fn predict_regions(model: &Model, regions: &[(RegionRecord, Tensor<f32>)], cfg: &InferenceConfig) -> Result<Vec<Vec<Detection>>> {
    regions.iter().map(|(_, img)| Ok(predict_region(model, img, cfg)?.detections)).collect()
}

/// AP with IoU ≥ 0.5 matching.
pub fn ap50(dets: &[Vec<Detection>], gts: &[Vec<BBox>]) -> Result<f64> {
    let m = match_all(dets, gts, &MatchConfig::iou(0.5))?;
    Ok(average_precision(&m.flagged, m.total_gt))
}

/// AP at IoU 0.5 over `regions` without TTA.
pub fn validate_ap50(model: &Model, regions: &[(RegionRecord, Tensor<f32>)]) -> Result<f64> {
    let dets = predict_regions(model, regions, &validation_protocol(model))?;
    let gts: Vec<Vec<BBox>> = regions.iter().map(|(r, _)| r.boxes()).collect();
    ap50(&dets, &gts)
}

fn checkpoint(model: &Model, epoch: usize, val_ap50: Option<f64>) -> Result<Checkpoint> {
    Ok(Checkpoint {
        epoch,
        meta: serde_json::json!({
            "val_ap50": val_ap50,
            "model": serde_json::to_value(&model.config)?,
        }),
        params: model.params.clone(),
    })
}

struct Outputs {
    dir: PathBuf,
    log: fs::File,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let log = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log })
    }

    fn append(&mut self, e: &EpochLog) -> Result<()> {
        let line = serde_json::to_string(e)? + "\n";
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    fn save_best(&self, ck: &Checkpoint) -> Result<()> {
        ck.save(self.dir.join(BEST_CHECKPOINT))?;
        let marker = self.dir.join(BEST_MARKER);
        let body = serde_json::json!({
            "checkpoint": BEST_CHECKPOINT,
            "epoch": ck.epoch,
            "val_ap50": ck.meta["val_ap50"],
        });
        fs::write(&marker, serde_json::to_string(&body)? + "\n").map_err(|e| Error::io(&marker, e))
    }
}

/// Trains on in-memory regions. With `out`, writes the JSONL log, the best
/// checkpoint and its marker there.
pub fn train_on(
    model: &mut Model,
    train_regions: Vec<(RegionRecord, Tensor<f32>)>,
    val_regions: &[(RegionRecord, Tensor<f32>)],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut outputs = out.map(Outputs::create).transpose()?;
    let mut best_checkpoint = checkpoint(model, 0, None)?;
    let mut best = (0, None);
    if cfg.epochs == 0 {
        if let Some(o) = &outputs {
            o.save_best(&best_checkpoint)?;
        }
        return Ok(TrainOutcome { log: Vec::new(), best, best_checkpoint });
    }
    let sampler = PatchSampler::with_patch_size(train_regions, cfg.input_size)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut sum = (0.0, 0.0, 0.0);
        for s in 0..cfg.steps_per_epoch {
            let step = (epoch - 1) * cfg.steps_per_epoch + s;
            let batch = assemble_batch(&sampler, cfg, step)?;
            let p = train_step(model, &batch, cfg, step)?;
            sum = (sum.0 + p.box_loss, sum.1 + p.obj_loss, sum.2 + p.total);
        }
        let n = cfg.steps_per_epoch as f64;
        let entry =
            EpochLog { epoch, box_loss: sum.0 / n, obj_loss: sum.1 / n, total: sum.2 / n, val_ap50: validate_ap50(model, val_regions)? };
        if best.1.is_none_or(|b| entry.val_ap50 > b) {
            best = (epoch, Some(entry.val_ap50));
            best_checkpoint = checkpoint(model, epoch, Some(entry.val_ap50))?;
            if let Some(o) = &outputs {
                o.save_best(&best_checkpoint)?;
            }
        }
        if let Some(o) = &mut outputs {
            o.append(&entry)?;
        }
        progress(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { log, best, best_checkpoint })
}

/// Loads the train split and `cfg.val_split` from `ds` and trains.
pub fn train(
    model: &mut Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
    progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let train_regions = load_regions(ds, Split::Train)?;
    let val_regions = load_regions(ds, cfg.val_split)?;
    if train_regions.is_empty() {
        return Err(Error::Data("dataset has no train regions".into()));
    }
    if val_regions.is_empty() {
        return Err(Error::Data(format!("dataset has no {} regions", cfg.val_split)));
    }
    train_on(model, train_regions, &val_regions, cfg, out, progress)
}

/// Model rebuilt from a checkpoint written by [`train_on`].
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<Model> {
    let cfg =
        serde_json::from_value(ck.meta["model"].clone()).map_err(|e| Error::Checkpoint(format!("checkpoint lacks a model config: {e}")))?;
    let mut model = crate::detector::build_model(&cfg, 0)?;
    crate::tensor::restore_into(&mut model.params, &ck.params)?;
    Ok(model)
}
