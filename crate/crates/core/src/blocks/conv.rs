use super::{BlockKind, BlockSpec, Builder, Module};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.03;
pub const BN_EPS: f64 = 1e-3;

/// Plain convolution, optionally with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(b: &mut Builder<'_>, c1: usize, c2: usize, k: usize, stride: usize, groups: usize, bias: bool) -> Self {
        assert!(c1.is_multiple_of(groups) && c2.is_multiple_of(groups), "channels {c1}->{c2} not divisible by groups {groups}");
        let fan_in = c1 / groups * k * k;
        let weight = b.uniform_fan_in("weight", vec![c2, c1 / groups, k, k], fan_in);
        let bias = bias.then(|| b.uniform_fan_in("bias", vec![c2], fan_in));
        Self { weight, bias, geom: ConvGeom { stride, padding: k / 2, groups }, in_channels: c1, out_channels: c2, kernel: k }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|id| g.param(store, id));
        g.conv2d(x, w, b, self.geom)
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels / self.geom.groups * self.kernel * self.kernel
    }
}

/// Batch normalization with running statistics stored as non-trainable
/// parameters; train-mode passes queue their updates on the graph.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder<'_>, c: usize) -> Self {
        Self {
            gamma: b.add("gamma", Tensor::ones(vec![c]), true),
            beta: b.add("beta", Tensor::zeros(vec![c]), true),
            running_mean: b.add("running_mean", Tensor::zeros(vec![c]), false),
            running_var: b.add("running_var", Tensor::ones(vec![c]), false),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let rm = store.value(self.running_mean);
        let rv = store.value(self.running_var);
        let (y, stats) = g.batchnorm2d(x, gamma, beta, rm.data(), rv.data(), BN_EPS)?;
        if let Some((mean, var)) = stats {
            let blend = |old: &Tensor<T>, batch: &[f64]| {
                let data =
                    old.data().iter().zip(batch).map(|(o, b)| T::from_f64((1.0 - BN_MOMENTUM) * o.as_f64() + BN_MOMENTUM * b)).collect();
                Tensor::new(old.shape().to_vec(), data)
            };
            let (m, v) = (blend(rm, &mean)?, blend(rv, &var)?);
            g.push_update(self.running_mean, m);
            g.push_update(self.running_var, v);
        }
        Ok(y)
    }
}

/// conv (no bias) → batch norm → optional SiLU. Padding is `k/2`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub act: bool,
}

impl ConvBlock {
    pub fn new(b: &mut Builder<'_>, c1: usize, c2: usize, k: usize, stride: usize) -> Self {
        Self::with(b, c1, c2, k, stride, 1, true)
    }

    pub fn with(b: &mut Builder<'_>, c1: usize, c2: usize, k: usize, stride: usize, groups: usize, act: bool) -> Self {
        let conv = Conv2d::new(&mut b.scope("conv"), c1, c2, k, stride, groups, false);
        let bn = BatchNorm::new(&mut b.scope("bn"), c2);
        Self { conv, bn, act }
    }

    pub fn check_input<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.conv.in_channels {
            return Err(Error::shape("conv_block", format!("expected {} input channels, got {s:?}", self.conv.in_channels)));
        }
        Ok(())
    }
}

impl Module for ConvBlock {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        if self.act {
            g.silu(y)
        } else {
            Ok(y)
        }
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            kind: BlockKind::ConvBlock,
            in_channels: self.conv.in_channels,
            out_channels: self.conv.out_channels,
            repeat: 1,
            kernel: self.conv.kernel,
            stride: self.conv.geom.stride,
            extra: 0,
        }
    }
}
