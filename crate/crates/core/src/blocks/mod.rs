//! Network building blocks: Conv+BN+SiLU units, C3k2, SPPF, C2PSA,
//! coordinate attention and the single-scale detection head.
//!
//! Blocks only hold [`ParamId`]s into a [`ParamStore`]; the same block
//! evaluates in `f32` for training and in `f64` for gradient checks.

mod attention;
mod conv;
mod coord_att;
mod csp;
mod head;
mod suite;

pub use attention::C2psa;
pub use conv::{BatchNorm, Conv2d, ConvBlock, BN_EPS, BN_MOMENTUM};
pub use coord_att::{CoordAtt, MIN_MID_CHANNELS};
pub use csp::{Bottleneck, C3k2, Sppf};
pub use head::{DetectHead, HEAD_OUTPUTS, PRED_INIT_SCALE};
pub use suite::{gradient_suite, randomize_norm_state, SuiteEntry, GRAD_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    ConvBlock,
    C3k2,
    Sppf,
    C2psa,
    CoordAtt,
    DetectHead,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] =
        [BlockKind::ConvBlock, BlockKind::C3k2, BlockKind::Sppf, BlockKind::C2psa, BlockKind::CoordAtt, BlockKind::DetectHead];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::ConvBlock => "ConvBlock",
            BlockKind::C3k2 => "C3k2",
            BlockKind::Sppf => "SPPF",
            BlockKind::C2psa => "C2PSA",
            BlockKind::CoordAtt => "CoordAtt",
            BlockKind::DetectHead => "DetectHead",
        }
    }
}

/// Static description of a block instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub repeat: usize,
    pub kernel: usize,
    pub stride: usize,
    /// CA reduction ratio (CoordAtt) or attention heads (C2PSA); 0 otherwise.
    pub extra: usize,
}

/// Forward evaluation shared by every block.
pub trait Module {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var>;
    fn spec(&self) -> BlockSpec;
}

/// Registers named parameters while a model tree is constructed.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Child builder whose parameter names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<f32>, trainable: bool) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value, trainable)
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform_fan_in(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, self.rng);
        self.add(name, t, true)
    }

    pub fn scale_value(&mut self, id: ParamId, factor: f32) {
        self.store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v *= factor);
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<f32>) {
        let p = self.store.get_mut(id);
        assert_eq!(p.value.shape(), value.shape(), "set_value shape for `{}`", p.name);
        p.value = value;
    }
}
