use super::{BlockKind, BlockSpec, Builder, ConvBlock, Module};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Real, Var};

/// Position-wise multi-head self-attention over the flattened H·W grid,
/// followed by a two-layer 1×1 feed-forward; both sublayers are residual.
#[derive(Clone, Debug)]
pub struct C2psa {
    pub qkv: ConvBlock,
    pub proj: ConvBlock,
    pub ffn1: ConvBlock,
    pub ffn2: ConvBlock,
    pub heads: usize,
    channels: usize,
}

impl C2psa {
    pub fn new(b: &mut Builder<'_>, c: usize, heads: usize) -> Self {
        assert!(heads >= 1 && c.is_multiple_of(heads), "{c} channels not divisible into {heads} heads");
        Self {
            qkv: ConvBlock::with(&mut b.scope("qkv"), c, 3 * c, 1, 1, 1, false),
            proj: ConvBlock::with(&mut b.scope("proj"), c, c, 1, 1, 1, false),
            ffn1: ConvBlock::new(&mut b.scope("ffn1"), c, 2 * c, 1, 1),
            ffn2: ConvBlock::with(&mut b.scope("ffn2"), 2 * c, c, 1, 1, 1, false),
            heads,
            channels: c,
        }
    }

    /// Attention sublayer before its residual add. Returns the projected
    /// output (B×C×H×W) and the attention weights (B×heads×N×N, rows over
    /// key positions).
    pub fn attention<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let (b, c, h, w) = g.check_rank4("c2psa", x)?;
        if c != self.channels {
            return Err(Error::shape("c2psa", format!("expected {} channels, got {c}", self.channels)));
        }
        let (n, d) = (h * w, c / self.heads);
        let qkv = self.qkv.forward(g, store, x)?;
        let parts = g.split_channels(qkv, &[c, c, c])?;
        let q = g.reshape(parts[0], &[b, self.heads, d, n])?;
        let k = g.reshape(parts[1], &[b, self.heads, d, n])?;
        let v = g.reshape(parts[2], &[b, self.heads, d, n])?;
        let qt = g.transpose_last2(q)?;
        let scores = g.matmul(qt, k)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = g.softmax_lastdim(scores)?;
        let attn_t = g.transpose_last2(attn)?;
        let out = g.matmul(v, attn_t)?;
        let out = g.reshape(out, &[b, c, h, w])?;
        let out = self.proj.forward(g, store, out)?;
        Ok((out, attn))
    }
}

impl Module for C2psa {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (att, _) = self.attention(g, store, x)?;
        let a = g.add(x, att)?;
        let f = self.ffn1.forward(g, store, a)?;
        let f = self.ffn2.forward(g, store, f)?;
        g.add(a, f)
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::C2psa,
            in_channels: self.channels,
            out_channels: self.channels,
            repeat: 1,
            kernel: 1,
            stride: 1,
            extra: self.heads,
        }
    }
}
