use crate::error::{Error, Result};
use crate::tensor::graph::Op;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Batched `a·b` over matching leading axes: (…, m, k)·(…, k, n) → (…, m, n).
/// The `trans_*` flags read the operand's last two axes transposed.
fn batched_matmul<T: Real>(a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] {
        return Err(Error::shape("matmul", format!("{:?} · {:?}", a.shape(), b.shape())));
    }
    let (ar, ac) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (br, bc) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    let (m, k, a_st) = if trans_a { (ac, ar, (1, ac as isize)) } else { (ar, ac, (ac as isize, 1)) };
    let (k2, n, b_st) = if trans_b { (bc, br, (1, bc as isize)) } else { (br, bc, (bc as isize, 1)) };
    if k != k2 {
        return Err(Error::shape("matmul", format!("{:?} · {:?}", a.shape(), b.shape())));
    }
    let batch: usize = a.shape()[..ra - 2].iter().product();
    let mut out = vec![T::zero(); batch * m * n];
    for (i, o) in out.chunks_mut(m * n).enumerate() {
        let ab = &a.data()[i * ar * ac..(i + 1) * ar * ac];
        let bb = &b.data()[i * br * bc..(i + 1) * br * bc];
        T::gemm(m, k, n, ab, a_st, bb, b_st, o, (n as isize, 1), false);
    }
    let mut shape = a.shape()[..ra - 2].to_vec();
    shape.extend([m, n]);
    Tensor::new(shape, out)
}

fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("rank ≥ 1");
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let e: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| T::from_f64(v / s)));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

impl<T: Real> Graph<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = batched_matmul(self.value(a), false, self.value(b), false)?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x), "softmax_lastdim")
    }
}

pub(crate) fn backward<T: Real>(g: &Graph<T>, v: Var, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = g.node(v);
    Ok(match &node.op {
        Op::MatMul(a, b) => {
            let (av, bv) = (g.value(*a), g.value(*b));
            let mut out = Vec::with_capacity(2);
            if g.node(*a).requires_grad {
                out.push((*a, batched_matmul(gy, false, bv, true)?));
            }
            if g.node(*b).requires_grad {
                out.push((*b, batched_matmul(av, true, gy, false)?));
            }
            out
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let n = *y.shape().last().expect("rank ≥ 1");
            let mut dx = Vec::with_capacity(y.numel());
            for (yr, gr) in y.data().chunks(n).zip(gy.data().chunks(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| T::from_f64(yv.as_f64() * (gv.as_f64() - dot))));
            }
            vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
        }
        _ => unreachable!("not a linalg op"),
    })
}
