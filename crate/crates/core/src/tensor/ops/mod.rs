//! Differentiable operations. Each submodule adds its forward methods to
//! [`Graph`] and provides the matching backward rule.

pub mod conv;
pub mod linalg;
pub mod norm;
pub mod pointwise;
pub mod pool;
pub mod shape;

use super::graph::Op;
use super::{Graph, Real, Tensor, Var};
use crate::error::Result;

pub use conv::conv2d_forward;
pub use pointwise::{sigmoid, silu};
pub use pool::max_pool5;

pub(crate) fn backward<T: Real>(g: &Graph<T>, v: Var, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    match &g.node(v).op {
        Op::Leaf => Ok(vec![]),
        Op::Conv2d { x, w, b, geom } => conv::backward(g, *x, *w, *b, *geom, gy),
        Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => norm::backward(g, *x, *gamma, *beta, mean, inv_std, *train, gy),
        Op::Silu(_) | Op::Sigmoid(_) | Op::Add(..) | Op::Mul(..) | Op::Scale(..) | Op::Sum(_) | Op::External { .. } => {
            pointwise::backward(g, v, gy)
        }
        Op::MaxPool5 { .. } | Op::AvgOverWidth(_) | Op::AvgOverHeight(_) => pool::backward(g, v, gy),
        Op::Concat { .. } | Op::Narrow { .. } | Op::Upsample2x(_) | Op::Reshape(_) | Op::TransposeLast2(_) => shape::backward(g, v, gy),
        Op::MatMul(..) | Op::Softmax(_) => linalg::backward(g, v, gy),
    }
}
