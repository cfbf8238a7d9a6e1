use crate::error::Result;
use crate::tensor::graph::Op;
use crate::tensor::{Graph, Real, Tensor, Var};

/// 5×5 window, stride 1, padding 2 (padding never wins a max).
pub fn max_pool5<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = vec![T::zero(); x.numel()];
    let mut argmax = vec![0u32; x.numel()];
    for (p, plane) in x.data().chunks(hw).enumerate() {
        for i in 0..h {
            let (y0, y1) = (i.saturating_sub(2), (i + 3).min(h));
            for j in 0..w {
                let (x0, x1) = (j.saturating_sub(2), (j + 3).min(w));
                let mut best = y0 * w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        // strict > keeps the first maximum in scan order
                        if plane[yy * w + xx] > plane[best] {
                            best = yy * w + xx;
                        }
                    }
                }
                out[p * hw + i * w + j] = plane[best];
                argmax[p * hw + i * w + j] = best as u32;
            }
        }
    }
    Ok((Tensor::new(vec![b, c, h, w], out)?, argmax))
}

fn avg_width<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let data = x.data().chunks(w).map(|row| T::from_f64(row.iter().map(|v| v.as_f64()).sum::<f64>() / w as f64)).collect();
    Tensor::new(vec![b, c, h, 1], data)
}

fn avg_height<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let mut data = Vec::with_capacity(b * c * w);
    for plane in x.data().chunks(h * w) {
        for j in 0..w {
            let s: f64 = (0..h).map(|i| plane[i * w + j].as_f64()).sum();
            data.push(T::from_f64(s / h as f64));
        }
    }
    Tensor::new(vec![b, c, 1, w], data)
}

impl<T: Real> Graph<T> {
    pub fn max_pool5(&mut self, x: Var) -> Result<Var> {
        self.check_rank4("max_pool5", x)?;
        let (out, argmax) = max_pool5(self.value(x))?;
        self.push(out, Op::MaxPool5 { x, argmax }, "max_pool5")
    }

    /// Mean over the width axis: B×C×H×W → B×C×H×1.
    pub fn avg_over_width(&mut self, x: Var) -> Result<Var> {
        self.check_rank4("avg_over_width", x)?;
        let out = avg_width(self.value(x))?;
        self.push(out, Op::AvgOverWidth(x), "avg_over_width")
    }

    /// Mean over the height axis: B×C×H×W → B×C×1×W.
    pub fn avg_over_height(&mut self, x: Var) -> Result<Var> {
        self.check_rank4("avg_over_height", x)?;
        let out = avg_height(self.value(x))?;
        self.push(out, Op::AvgOverHeight(x), "avg_over_height")
    }
}

pub(crate) fn backward<T: Real>(g: &Graph<T>, v: Var, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = g.node(v);
    Ok(match &node.op {
        Op::MaxPool5 { x, argmax } => {
            let (_, _, h, w) = g.value(*x).dims4()?;
            let hw = h * w;
            let mut dx = Tensor::zeros(g.shape(*x).to_vec());
            let d = dx.data_mut();
            for (p, (gp, ap)) in gy.data().chunks(hw).zip(argmax.chunks(hw)).enumerate() {
                for (&gv, &a) in gp.iter().zip(ap) {
                    let o = p * hw + a as usize;
                    d[o] = d[o] + gv;
                }
            }
            vec![(*x, dx)]
        }
        Op::AvgOverWidth(x) => {
            let (_, _, _, w) = g.value(*x).dims4()?;
            let inv = T::from_f64(1.0 / w as f64);
            let data = gy.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, w)).collect();
            vec![(*x, Tensor::new(g.shape(*x).to_vec(), data)?)]
        }
        Op::AvgOverHeight(x) => {
            let (_, _, h, w) = g.value(*x).dims4()?;
            let inv = T::from_f64(1.0 / h as f64);
            let mut data = Vec::with_capacity(g.value(*x).numel());
            for row in gy.data().chunks(w) {
                for _ in 0..h {
                    data.extend(row.iter().map(|&gv| gv * inv));
                }
            }
            vec![(*x, Tensor::new(g.shape(*x).to_vec(), data)?)]
        }
        _ => unreachable!("not a pooling op"),
    })
}
