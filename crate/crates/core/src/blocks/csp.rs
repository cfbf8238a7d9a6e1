use super::{BlockKind, BlockSpec, Builder, ConvBlock, Module};
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Real, Var};

/// Two 3×3 ConvBlocks with an optional identity shortcut.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub cv1: ConvBlock,
    pub cv2: ConvBlock,
    pub shortcut: bool,
}

impl Bottleneck {
    pub fn new(b: &mut Builder<'_>, c: usize, shortcut: bool) -> Self {
        Self { cv1: ConvBlock::new(&mut b.scope("cv1"), c, c, 3, 1), cv2: ConvBlock::new(&mut b.scope("cv2"), c, c, 3, 1), shortcut }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.cv1.forward(g, store, x)?;
        let y = self.cv2.forward(g, store, y)?;
        if self.shortcut {
            g.add(x, y)
        } else {
            Ok(y)
        }
    }
}

/// Split-transform-merge block: a 1×1 conv into two halves, one half passes
/// through `repeat` residual bottlenecks, both halves are concatenated and
/// merged by a 1×1 conv.
#[derive(Clone, Debug)]
pub struct C3k2 {
    pub cv1: ConvBlock,
    pub m: Vec<Bottleneck>,
    pub cv2: ConvBlock,
    hidden: usize,
}

impl C3k2 {
    pub fn new(b: &mut Builder<'_>, c1: usize, c2: usize, repeat: usize, shortcut: bool) -> Self {
        let hidden = (c2 / 2).max(1);
        let cv1 = ConvBlock::new(&mut b.scope("cv1"), c1, 2 * hidden, 1, 1);
        let m = (0..repeat).map(|i| Bottleneck::new(&mut b.scope(&format!("m{i}")), hidden, shortcut)).collect();
        let cv2 = ConvBlock::new(&mut b.scope("cv2"), 2 * hidden, c2, 1, 1);
        Self { cv1, m, cv2, hidden }
    }
}

impl Module for C3k2 {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.cv1.forward(g, store, x)?;
        let parts = g.split_channels(y, &[self.hidden, self.hidden])?;
        let mut z = parts[1];
        for bn in &self.m {
            z = bn.forward(g, store, z)?;
        }
        let cat = g.concat_channels(&[parts[0], z])?;
        self.cv2.forward(g, store, cat)
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::C3k2,
            in_channels: self.cv1.conv.in_channels,
            out_channels: self.cv2.conv.out_channels,
            repeat: self.m.len(),
            kernel: 3,
            stride: 1,
            extra: 0,
        }
    }
}

/// Spatial pyramid pooling (fast): 1×1 conv, three chained 5×5 max pools,
/// concat of all four maps, 1×1 conv.
#[derive(Clone, Debug)]
pub struct Sppf {
    pub cv1: ConvBlock,
    pub cv2: ConvBlock,
}

impl Sppf {
    pub fn new(b: &mut Builder<'_>, c1: usize, c2: usize) -> Self {
        let hidden = (c1 / 2).max(1);
        Self { cv1: ConvBlock::new(&mut b.scope("cv1"), c1, hidden, 1, 1), cv2: ConvBlock::new(&mut b.scope("cv2"), 4 * hidden, c2, 1, 1) }
    }
}

impl Module for Sppf {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y0 = self.cv1.forward(g, store, x)?;
        let y1 = g.max_pool5(y0)?;
        let y2 = g.max_pool5(y1)?;
        let y3 = g.max_pool5(y2)?;
        let cat = g.concat_channels(&[y0, y1, y2, y3])?;
        self.cv2.forward(g, store, cat)
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::Sppf,
            in_channels: self.cv1.conv.in_channels,
            out_channels: self.cv2.conv.out_channels,
            repeat: 1,
            kernel: 5,
            stride: 1,
            extra: 0,
        }
    }
}
