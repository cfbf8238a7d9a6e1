//! The assembled single-scale detector: configuration, network, target
//! assignment, loss and grid decoding.

mod config;
pub mod decode;
mod loss;
mod model;
mod target;

pub use config::{ModelConfig, BASE_REPEATS, BASE_WIDTHS, MODEL_STRIDE};
pub use decode::{decode, decode_cell, encode};
pub use loss::{bce_with_logits, ciou, ciou_with_grad, compute_loss, LossParts, LossWeights};
pub use model::{build_model, build_model_with, head_prior, HeadLayout, LayerInfo, Model, Network};
pub use target::{assign_targets, TargetMap};

use crate::error::Result;
use crate::tensor::{Graph, Real, Var};

/// Scalar loss node on `pred` whose backward injects the analytic loss
/// gradient.
pub fn attach_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: &TargetMap, w: LossWeights) -> Result<(Var, LossParts)> {
    let (parts, grad) = compute_loss(g.value(pred), target, w)?;
    let v = g.external_scalar(pred, parts.total, grad)?;
    Ok((v, parts))
}
