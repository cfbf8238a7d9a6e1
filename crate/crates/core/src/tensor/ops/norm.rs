use crate::error::{Error, Result};
use crate::tensor::graph::Op;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Per-channel batch statistics from a train-mode pass: `(mean, unbiased var)`.
pub type BatchStats = (Vec<f64>, Vec<f64>);

impl<T: Real> Graph<T> {
    /// Batch normalization over B×C×H×W. Train graphs normalize by batch
    /// statistics and return them; eval graphs use the running estimates.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (b, c, h, w) = self.check_rank4("batchnorm2d", x)?;
        if b == 0 {
            return Err(Error::Config("batchnorm2d: zero batch".into()));
        }
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape("batchnorm2d", format!("{name} has {len} entries for {c} channels")));
            }
        }
        let hw = h * w;
        let n = (b * hw) as f64;
        let xd = self.value(x).data();

        let (mean, var_biased): (Vec<f64>, Vec<f64>) = if self.is_train() {
            (0..c)
                .map(|ci| {
                    let chan = || (0..b).flat_map(move |bi| xd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].iter());
                    let m = chan().map(|v| v.as_f64()).sum::<f64>() / n;
                    let v = chan().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / n;
                    (m, v)
                })
                .unzip()
        } else {
            (running_mean.iter().map(|v| v.as_f64()).collect(), running_var.iter().map(|v| v.as_f64()).collect())
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![T::zero(); xd.len()];
        for (plane_idx, (o, xi)) in out.chunks_mut(hw).zip(xd.chunks(hw)).enumerate() {
            let ci = plane_idx % c;
            let scale = gd[ci].as_f64() * inv_std[ci];
            let shift = bd[ci].as_f64() - mean[ci] * scale;
            let (scale, shift) = (T::from_f64(scale), T::from_f64(shift));
            o.iter_mut().zip(xi).for_each(|(o, &v)| *o = v * scale + shift);
        }

        let stats = self.is_train().then(|| {
            let unbiased = if n > 1.0 { var_biased.iter().map(|v| v * n / (n - 1.0)).collect() } else { var_biased.clone() };
            (mean.clone(), unbiased)
        });
        let train = self.is_train();
        let out = Tensor::new(vec![b, c, h, w], out)?;
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, "batchnorm2d")?;
        Ok((v, stats))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[f64],
    inv_std: &[f64],
    train: bool,
    gy: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let xt = g.value(x);
    let (b, c, h, w) = xt.dims4()?;
    let hw = h * w;
    let n = (b * hw) as f64;
    let (xd, gd) = (xt.data(), gy.data());
    let gam = g.value(gamma).data();

    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (plane_idx, (xi, gi)) in xd.chunks(hw).zip(gd.chunks(hw)).enumerate() {
        let ci = plane_idx % c;
        for (&xv, &gv) in xi.iter().zip(gi) {
            let xhat = (xv.as_f64() - mean[ci]) * inv_std[ci];
            sum_dy[ci] += gv.as_f64();
            sum_dy_xhat[ci] += gv.as_f64() * xhat;
        }
    }

    let mut dx = vec![T::zero(); xd.len()];
    for (plane_idx, ((o, xi), gi)) in dx.chunks_mut(hw).zip(xd.chunks(hw)).zip(gd.chunks(hw)).enumerate() {
        let ci = plane_idx % c;
        let k = gam[ci].as_f64() * inv_std[ci];
        for ((o, &xv), &gv) in o.iter_mut().zip(xi).zip(gi) {
            let v = if train {
                let xhat = (xv.as_f64() - mean[ci]) * inv_std[ci];
                k / n * (n * gv.as_f64() - sum_dy[ci] - xhat * sum_dy_xhat[ci])
            } else {
                k * gv.as_f64()
            };
            *o = T::from_f64(v);
        }
    }

    Ok(vec![
        (x, Tensor::new(xt.shape().to_vec(), dx)?),
        (gamma, Tensor::new(vec![c], sum_dy_xhat.into_iter().map(T::from_f64).collect())?),
        (beta, Tensor::new(vec![c], sum_dy.into_iter().map(T::from_f64).collect())?),
    ])
}
