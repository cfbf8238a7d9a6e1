use crate::error::{Error, Result};
use crate::tensor::graph::Op;
use crate::tensor::{Graph, Real, Tensor, Var};

/// `(outer, inner)` block sizes around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

fn narrow_data<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Vec<T> {
    let (outer, inner) = around(x.shape(), axis);
    let dim = x.shape()[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    out
}

fn transpose_last2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.rank();
    let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    let mut out = vec![T::zero(); x.numel()];
    for (src, dst) in x.data().chunks(m * n).zip(out.chunks_mut(m * n)) {
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    Tensor::new(shape, out).expect("transposed shape")
}

impl<T: Real> Graph<T> {
    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, inner) = around(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Concat { xs: xs.to_vec(), axis }, "concat")
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        self.concat(xs, 1)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
        }
        let data = narrow_data(self.value(x), axis, start, len);
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Narrow { x, axis, start }, "narrow")
    }

    /// Splits channels into consecutive groups of the given sizes.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let c = *self.shape(x).get(1).ok_or_else(|| Error::shape("split_channels", "rank < 2"))?;
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::shape("split_channels", format!("{sizes:?} do not sum to {c}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(x, 1, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Nearest-neighbour 2× upsampling of B×C×H×W.
    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.check_rank4("upsample_nearest_2x", x)?;
        let mut out = Vec::with_capacity(b * c * 4 * h * w);
        for plane in self.value(x).data().chunks(h * w) {
            for row in plane.chunks(w) {
                for _ in 0..2 {
                    for &v in row {
                        out.push(v);
                        out.push(v);
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, c, 2 * h, 2 * w], out)?;
        self.push(out, Op::Upsample2x(x), "upsample_nearest_2x")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// B×C×H×W → B×C×(H·W).
    pub fn flatten_spatial(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.check_rank4("flatten_spatial", x)?;
        self.reshape(x, &[b, c, h * w])
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() < 2 {
            return Err(Error::shape("transpose_last2", "rank < 2"));
        }
        let out = transpose_last2(self.value(x));
        self.push(out, Op::TransposeLast2(x), "transpose_last2")
    }
}

pub(crate) fn backward<T: Real>(g: &Graph<T>, v: Var, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = g.node(v);
    Ok(match &node.op {
        Op::Concat { xs, axis } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(xs.len());
            for &x in xs {
                let len = g.shape(x)[*axis];
                let d = narrow_data(gy, *axis, start, len);
                out.push((x, Tensor::new(g.shape(x).to_vec(), d)?));
                start += len;
            }
            out
        }
        Op::Narrow { x, axis, start } => {
            let xs = g.shape(*x);
            let (outer, inner) = around(xs, *axis);
            let (dim, len) = (xs[*axis], gy.shape()[*axis]);
            let mut dx = Tensor::zeros(xs.to_vec());
            for o in 0..outer {
                let dst = (o * dim + start) * inner;
                dx.data_mut()[dst..dst + len * inner].copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(*x, dx)]
        }
        Op::Upsample2x(x) => {
            let (_, _, h, w) = g.value(*x).dims4()?;
            let mut dx = Vec::with_capacity(g.value(*x).numel());
            for plane in gy.data().chunks(4 * h * w) {
                for i in 0..h {
                    for j in 0..w {
                        let r0 = 2 * i * 2 * w + 2 * j;
                        let r1 = r0 + 2 * w;
                        dx.push(plane[r0] + plane[r0 + 1] + plane[r1] + plane[r1 + 1]);
                    }
                }
            }
            vec![(*x, Tensor::new(g.shape(*x).to_vec(), dx)?)]
        }
        Op::Reshape(x) => vec![(*x, gy.clone().reshape(g.shape(*x).to_vec())?)],
        Op::TransposeLast2(x) => vec![(*x, transpose_last2(gy))],
        _ => unreachable!("not a shape op"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_replicates() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.upsample_nearest_2x(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut g = Graph::<f32>::new(false);
        let a = g.input(Tensor::from_fn(vec![2, 3, 2, 2], |i| i as f32));
        let b = g.input(Tensor::from_fn(vec![2, 5, 2, 2], |i| -(i as f32)));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 8, 2, 2]);
        let parts = g.split_channels(c, &[3, 5]).unwrap();
        assert_eq!(g.value(parts[0]), g.value(a));
        assert_eq!(g.value(parts[1]), g.value(b));
        assert!(g.split_channels(c, &[3, 4]).is_err());
    }
}
