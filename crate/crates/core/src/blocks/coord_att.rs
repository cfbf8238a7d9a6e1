use super::{BlockKind, BlockSpec, Builder, Conv2d, ConvBlock, Module};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Real, Var};

/// Smallest width of the shared bottleneck.
pub const MIN_MID_CHANNELS: usize = 8;

/// Coordinate attention: width- and height-pooled descriptors share a 1×1
/// bottleneck, then produce a per-row gate `gʰ` and per-column gate `gʷ`;
/// the output is `x·gʰ·gʷ`.
#[derive(Clone, Debug)]
pub struct CoordAtt {
    pub conv1: ConvBlock,
    pub conv_h: Conv2d,
    pub conv_w: Conv2d,
    channels: usize,
    reduction: usize,
}

impl CoordAtt {
    pub fn new(b: &mut Builder<'_>, c: usize, reduction: usize) -> Self {
        assert!(reduction >= 1 && reduction <= c, "reduction ratio {reduction} outside [1, {c}]");
        let mid = (c / reduction).max(MIN_MID_CHANNELS);
        Self {
            conv1: ConvBlock::new(&mut b.scope("conv1"), c, mid, 1, 1),
            conv_h: Conv2d::new(&mut b.scope("conv_h"), mid, c, 1, 1, 1, true),
            conv_w: Conv2d::new(&mut b.scope("conv_w"), mid, c, 1, 1, 1, true),
            channels: c,
            reduction,
        }
    }

    pub fn mid_channels(&self) -> usize {
        self.conv1.conv.out_channels
    }

    /// Sigmoid gates: `gʰ` is B×C×H×1 and `gʷ` is B×C×1×W.
    pub fn gates<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let (_, c, h, w) = g.check_rank4("coordinate_attention", x)?;
        if c != self.channels {
            return Err(Error::shape("coordinate_attention", format!("expected {} channels, got {c}", self.channels)));
        }
        let zh = g.avg_over_width(x)?;
        let zw = g.avg_over_height(x)?;
        let zw = g.transpose_last2(zw)?;
        let cat = g.concat(&[zh, zw], 2)?;
        let y = self.conv1.forward(g, store, cat)?;
        let yh = g.narrow(y, 2, 0, h)?;
        let yw = g.narrow(y, 2, h, w)?;
        let yw = g.transpose_last2(yw)?;
        let gh = self.conv_h.forward(g, store, yh)?;
        let gh = g.sigmoid(gh)?;
        let gw = self.conv_w.forward(g, store, yw)?;
        let gw = g.sigmoid(gw)?;
        Ok((gh, gw))
    }
}

impl Module for CoordAtt {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (gh, gw) = self.gates(g, store, x)?;
        let y = g.mul(x, gh)?;
        g.mul(y, gw)
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::CoordAtt,
            in_channels: self.channels,
            out_channels: self.channels,
            repeat: 1,
            kernel: 1,
            stride: 1,
            extra: self.reduction,
        }
    }
}
