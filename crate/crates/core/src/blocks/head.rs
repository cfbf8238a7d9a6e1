use super::{BlockKind, BlockSpec, Builder, Conv2d, ConvBlock, Module};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};

/// Raw prediction channels per cell: `tx, ty, tw, th, obj`.
pub const HEAD_OUTPUTS: usize = 5;

/// Shrink factor on the initial output-conv weights, so every cell starts
/// close to the prior.
pub const PRED_INIT_SCALE: f32 = 0.01;

/// Single-class detection head.
///
/// Unit 1 is depthwise 3×3 + pointwise 1×1. Unit 2 uses a full 3×3
/// convolution in place of the depthwise one so channels mix before the
/// 1×1. A final biased 1×1 conv emits the five raw channels.
#[derive(Clone, Debug)]
pub struct DetectHead {
    pub dw: ConvBlock,
    pub pw1: ConvBlock,
    pub full: ConvBlock,
    pub pw2: ConvBlock,
    pub pred: Conv2d,
    channels: usize,
}

impl DetectHead {
    /// `prior` initializes the bias of the five output channels; the output
    /// weights start at [`PRED_INIT_SCALE`] of the usual range.
    pub fn new(b: &mut Builder<'_>, c: usize, prior: [f32; HEAD_OUTPUTS]) -> Self {
        let dw = ConvBlock::with(&mut b.scope("dw"), c, c, 3, 1, c, true);
        let pw1 = ConvBlock::new(&mut b.scope("pw1"), c, c, 1, 1);
        let full = ConvBlock::new(&mut b.scope("full"), c, c, 3, 1);
        let pw2 = ConvBlock::new(&mut b.scope("pw2"), c, c, 1, 1);
        let pred = Conv2d::new(&mut b.scope("pred"), c, HEAD_OUTPUTS, 1, 1, 1, true);
        b.scale_value(pred.weight, PRED_INIT_SCALE);
        if let Some(bias) = pred.bias {
            b.set_value(bias, Tensor::new(vec![HEAD_OUTPUTS], prior.to_vec()).expect("bias shape"));
        }
        Self { dw, pw1, full, pw2, pred, channels: c }
    }
}

impl Module for DetectHead {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.check_rank4("detect_head", x)?;
        if c != self.channels {
            return Err(Error::shape("detect_head", format!("expected {} channels, got {c}", self.channels)));
        }
        let y = self.dw.forward(g, store, x)?;
        let y = self.pw1.forward(g, store, y)?;
        let y = self.full.forward(g, store, y)?;
        let y = self.pw2.forward(g, store, y)?;
        self.pred.forward(g, store, y)
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::DetectHead,
            in_channels: self.channels,
            out_channels: HEAD_OUTPUTS,
            repeat: 2,
            kernel: 3,
            stride: 1,
            extra: 0,
        }
    }
}
