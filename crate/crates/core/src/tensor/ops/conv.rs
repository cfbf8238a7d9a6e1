use crate::error::{Error, Result};
use crate::par;
use crate::tensor::graph::{ConvGeom, Op};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    groups: usize,
    stride: usize,
    pad: usize,
}

impl ConvShape {
    fn new(x: &[usize], w: &[usize], geom: ConvGeom) -> Result<Self> {
        let bad = |d: String| Error::shape("conv2d", d);
        let [batch, cin, h, wd] = x[..] else {
            return Err(bad(format!("input must be B×C×H×W, got {x:?}")));
        };
        let [cout, cg, k, k2] = w[..] else {
            return Err(bad(format!("weight must be Cout×Cin/g×k×k, got {w:?}")));
        };
        let ConvGeom { stride, padding, groups } = geom;
        if k != k2 || stride == 0 || groups == 0 {
            return Err(bad(format!("unsupported kernel {w:?} / geometry {geom:?}")));
        }
        if cin % groups != 0 || cout % groups != 0 || cg != cin / groups {
            return Err(bad(format!("channels {cin}->{cout} incompatible with groups {groups} and weight {w:?}")));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(bad(format!("kernel {k} larger than padded input {h}×{wd}")));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k,
            ho: (h + 2 * padding - k) / stride + 1,
            wo: (wd + 2 * padding - k) / stride + 1,
            groups,
            stride,
            pad: padding,
        })
    }

    fn cg(&self) -> usize {
        self.cin / self.groups
    }

    fn cog(&self) -> usize {
        self.cout / self.groups
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    fn kg(&self) -> usize {
        self.cg() * self.k * self.k
    }

    /// 1×1 stride-1 unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one group of one image (`c×h×w`) into `(c·k·k)×(ho·wo)`.
fn im2col<T: Real>(x: &[T], c: usize, s: &ConvShape, col: &mut [T]) {
    let (h, w, k, ho, wo) = (s.h, s.w, s.k, s.ho, s.wo);
    let n = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { T::zero() };
                    }
                }
            }
        }
    }
}

/// Folds a column-gradient matrix back onto the input plane (accumulating).
fn col2im<T: Real>(col: &[T], c: usize, s: &ConvShape, dx: &mut [T]) {
    let (h, w, k, ho, wo) = (s.h, s.w, s.k, s.ho, s.wo);
    let n = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] = drow[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` (B×Cin×H×W) with `weight` (Cout×Cin/g×k×k).
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, geom: ConvGeom) -> Result<Tensor<T>> {
    let s = ConvShape::new(x.shape(), weight.shape(), geom)?;
    if let Some(b) = bias {
        if b.shape() != [s.cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", b.shape(), s.cout)));
        }
    }
    let (n, kg, cg, cog) = (s.n(), s.kg(), s.cg(), s.cog());
    let in_stride = s.cin * s.h * s.w;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); s.batch * s.cout * n];
    par::for_each_chunk_mut(&mut out, s.cout * n, |bi, ob| {
        let xb = &xd[bi * in_stride..(bi + 1) * in_stride];
        let mut col = if s.is_pointwise() { Vec::new() } else { vec![T::zero(); kg * n] };
        for g in 0..s.groups {
            let xg = &xb[g * cg * s.h * s.w..(g + 1) * cg * s.h * s.w];
            let cols: &[T] = if s.is_pointwise() {
                xg
            } else {
                im2col(xg, cg, &s, &mut col);
                &col
            };
            let wg = &wd[g * cog * kg..(g + 1) * cog * kg];
            let og = &mut ob[g * cog * n..(g + 1) * cog * n];
            T::gemm(cog, kg, n, wg, (kg as isize, 1), cols, (n as isize, 1), og, (n as isize, 1), false);
        }
        if let Some(b) = bias {
            for (co, row) in ob.chunks_mut(n).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Tensor::new(vec![s.batch, s.cout, s.ho, s.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    geom: ConvGeom,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let s = ConvShape::new(x.shape(), weight.shape(), geom)?;
    let (n, kg, cg, cog) = (s.n(), s.kg(), s.cg(), s.cog());
    let in_stride = s.cin * s.h * s.w;
    let out_stride = s.cout * n;
    let (xd, wd, gd) = (x.data(), weight.data(), gy.data());

    // Per-image partials; summed afterwards in image order.
    let partials = par::map_indexed(s.batch, |bi| {
        let xb = &xd[bi * in_stride..(bi + 1) * in_stride];
        let gb = &gd[bi * out_stride..(bi + 1) * out_stride];
        let mut dx = if need_dx { vec![T::zero(); in_stride] } else { Vec::new() };
        let mut dw = vec![T::zero(); s.cout * kg];
        let mut col = if s.is_pointwise() { Vec::new() } else { vec![T::zero(); kg * n] };
        for g in 0..s.groups {
            let xg = &xb[g * cg * s.h * s.w..(g + 1) * cg * s.h * s.w];
            let gg = &gb[g * cog * n..(g + 1) * cog * n];
            let wg = &wd[g * cog * kg..(g + 1) * cog * kg];
            let cols: &[T] = if s.is_pointwise() {
                xg
            } else {
                im2col(xg, cg, &s, &mut col);
                &col
            };
            // dW_g = gy_g · colsᵀ
            let dwg = &mut dw[g * cog * kg..(g + 1) * cog * kg];
            T::gemm(cog, n, kg, gg, (n as isize, 1), cols, (1, n as isize), dwg, (kg as isize, 1), false);
            if need_dx {
                let dxg = &mut dx[g * cg * s.h * s.w..(g + 1) * cg * s.h * s.w];
                if s.is_pointwise() {
                    T::gemm(kg, cog, n, wg, (1, kg as isize), gg, (n as isize, 1), dxg, (n as isize, 1), false);
                } else {
                    T::gemm(kg, cog, n, wg, (1, kg as isize), gg, (n as isize, 1), &mut col, (n as isize, 1), false);
                    col2im(&col, cg, &s, dxg);
                }
            }
        }
        (dx, dw)
    });

    let mut dw = vec![T::zero(); s.cout * kg];
    let mut dx = Vec::with_capacity(if need_dx { s.batch * in_stride } else { 0 });
    for (dxb, dwb) in partials {
        dw.iter_mut().zip(&dwb).for_each(|(a, &b)| *a = *a + b);
        dx.extend(dxb);
    }

    let mut db = vec![0.0f64; s.cout];
    for gb in gd.chunks(out_stride) {
        for (co, row) in gb.chunks(n).enumerate() {
            db[co] += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }

    Ok(ConvGrads {
        dx: if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None },
        dw: Tensor::new(weight.shape().to_vec(), dw)?,
        db: Tensor::new(vec![s.cout], db.into_iter().map(T::from_f64).collect())?,
    })
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        self.push(out, Op::Conv2d { x, w, b, geom }, "conv2d")
    }
}

pub(crate) fn backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
    gy: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let need_dx = g.node(x).requires_grad;
    let grads = conv2d_backward(g.value(x), g.value(w), gy, geom, need_dx)?;
    let mut out = vec![(w, grads.dw)];
    if let Some(dx) = grads.dx {
        out.push((x, dx));
    }
    if let Some(b) = b {
        out.push((b, grads.db));
    }
    Ok(out)
}
