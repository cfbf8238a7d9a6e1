//! Tape of tensor operations and its reverse sweep.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order
//! for the chain rule.

use std::collections::BTreeMap;

use super::ops;
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Silu(Var),
    Sigmoid(Var),
    MaxPool5 {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgOverWidth(Var),
    AvgOverHeight(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Upsample2x(Var),
    Reshape(Var),
    TransposeLast2(Var),
    MatMul(Var, Var),
    Softmax(Var),
    Sum(Var),
    /// Scalar computed outside the tape with a precomputed gradient wrt `x`.
    External {
        x: Var,
        grad: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Silu(x)
            | Op::Sigmoid(x)
            | Op::AvgOverWidth(x)
            | Op::AvgOverHeight(x)
            | Op::Scale(x, _)
            | Op::Upsample2x(x)
            | Op::Reshape(x)
            | Op::TransposeLast2(x)
            | Op::Softmax(x)
            | Op::Sum(x) => vec![*x],
            Op::MaxPool5 { x, .. } | Op::Narrow { x, .. } | Op::External { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    param_lookup: BTreeMap<ParamId, Var>,
    updates: Vec<(ParamId, Tensor<T>)>,
    train: bool,
    corrupt_backward: bool,
}

/// Reverse-mode results, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Graph<T> {
    /// `train` selects batch statistics in batch-norm layers.
    pub fn new(train: bool) -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), param_lookup: BTreeMap::new(), updates: Vec::new(), train, corrupt_backward: false }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Fault-injection hook: makes the SiLU backward rule wrong by 10%.
    pub fn corrupt_backward(&mut self, on: bool) {
        self.corrupt_backward = on;
    }

    pub(crate) fn is_corrupt(&self) -> bool {
        self.corrupt_backward
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        v
    }

    /// Constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf holding a copy of a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value, op, requires_grad });
        Ok(v)
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.updates)
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.shape(root).to_vec()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let contributions = ops::backward(self, Var(idx), &gy)?;
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                g.ensure_finite("backward")?;
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn check_rank4(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize, usize)> {
        self.value(v).dims4().map_err(|_| Error::shape(op, format!("expected B×C×H×W, got {:?}", self.shape(v))))
    }
}
