use crate::error::{Error, Result};
use crate::tensor::graph::Op;
use crate::tensor::{Graph, Real, Tensor, Var};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out`; broadcast axes get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == out[d] { acc } else { 0 };
        acc *= shape[d];
    }
    strides
}

/// Visits every output position with the matching flat offsets of `a` and `b`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..total {
        f(flat, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::new(out, data)
}

/// Sums `grad` down to `shape` (the pre-broadcast operand shape).
fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let st = broadcast_strides(shape, out);
    let mut acc = vec![0.0f64; shape.iter().product()];
    let gd = grad.data();
    for_each_broadcast(out, &st, &st, |o, i, _| acc[i] += gd[o].as_f64());
    Tensor::new(shape.to_vec(), acc.into_iter().map(T::from_f64).collect()).expect("reduced shape")
}

impl<T: Real> Graph<T> {
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), silu);
        self.push(out, Op::Silu(x), "silu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    /// Elementwise sum with same-rank broadcasting over unit axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Elementwise product with same-rank broadcasting over unit axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let out = map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), "sum")
    }

    /// Attaches a scalar computed outside the tape whose gradient wrt `x`
    /// is already known.
    pub fn external_scalar(&mut self, x: Var, value: f64, grad: Tensor<T>) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(Error::shape("external_scalar", format!("gradient {:?} for input {:?}", grad.shape(), self.shape(x))));
        }
        self.push(Tensor::scalar(T::from_f64(value)), Op::External { x, grad }, "external_scalar")
    }
}

pub(crate) fn backward<T: Real>(g: &Graph<T>, v: Var, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = g.node(v);
    Ok(match &node.op {
        Op::Silu(x) => {
            let k = if g.is_corrupt() { T::from_f64(1.1) } else { T::one() };
            let xd = g.value(*x).data();
            let d = xd
                .iter()
                .zip(gy.data())
                .map(|(&xv, &gv)| {
                    let s = sigmoid(xv);
                    gv * s * (T::one() + xv * (T::one() - s)) * k
                })
                .collect();
            vec![(*x, Tensor::new(gy.shape().to_vec(), d)?)]
        }
        Op::Sigmoid(x) => {
            let d = node.value.data().iter().zip(gy.data()).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
            vec![(*x, Tensor::new(gy.shape().to_vec(), d)?)]
        }
        Op::Add(a, b) => vec![(*a, reduce_to(gy, g.shape(*a))), (*b, reduce_to(gy, g.shape(*b)))],
        Op::Mul(a, b) => {
            let (av, bv) = (g.value(*a), g.value(*b));
            let ga = binary("mul", gy, bv, |x, y| x * y)?;
            let gb = binary("mul", gy, av, |x, y| x * y)?;
            vec![(*a, reduce_to(&ga, av.shape())), (*b, reduce_to(&gb, bv.shape()))]
        }
        Op::Scale(x, s) => vec![(*x, map(gy, |v| v * *s))],
        Op::Sum(x) => {
            let gv = gy.data()[0];
            vec![(*x, Tensor::full(g.shape(*x).to_vec(), gv))]
        }
        Op::External { x, grad } => {
            let gv = gy.data()[0];
            vec![(*x, map(grad, |v| v * gv))]
        }
        _ => unreachable!("not a pointwise op"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations_at_zero() {
        assert_eq!(silu(0.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64).is_finite());
        assert!(sigmoid(800.0f64) == 1.0);
    }

    #[test]
    fn broadcast_mul_and_reduce() {
        let a = Tensor::<f64>::from_fn(vec![1, 2, 2, 3], |i| i as f64);
        let b = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = binary("mul", &a, &b, |x, y| x * y).unwrap();
        assert_eq!(y.at(&[0, 1, 1, 2]), 11.0 * 4.0);
        assert_eq!(y.at(&[0, 0, 1, 0]), 3.0 * 2.0);
        let r = reduce_to(&y, &[1, 2, 2, 1]);
        assert_eq!(r.at(&[0, 0, 0, 0]), 0.0 + 1.0 + 2.0);
        assert!(broadcast_shape("t", &[2, 3], &[3, 2]).is_err());
    }
}
