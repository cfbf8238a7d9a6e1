//! Finite-difference verification of reverse-mode gradients.
//!
//! Both the analytic gradient and the central differences are evaluated in
//! `f64`. The subgraph output is reduced to a scalar by a fixed random
//! weighted sum, so normalizing layers do not produce a trivially zero
//! gradient.

use rand::seq::index::sample;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub check_params: bool,
    /// Batch-norm mode of the graphs under test.
    pub train: bool,
    pub seed: u64,
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-3, max_coords: 48, check_params: true, train: true, seed: 0, corrupt_backward: false }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor holding the worst coordinate (`input` or a parameter name).
    pub worst: String,
    /// Analytic and numeric values at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

/// Relative error with a small absolute floor for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn grad_check<F>(f: F, input: &Tensor<f64>, store: &ParamStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> Result<Var>,
{
    // Probe the output shape once to fix the reduction weights.
    let out_shape = {
        let mut g = Graph::new(opts.train);
        let x = g.input(input.clone());
        let y = f(&mut g, store, x)?;
        g.shape(y).to_vec()
    };
    let weights = Tensor::<f64>::uniform(out_shape, -1.0, 1.0, &mut rng::stream(opts.seed, "gradcheck-w", 0));

    let scalar = |x_val: &Tensor<f64>, s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(opts.train);
        let x = g.input(x_val.clone());
        let y = f(&mut g, s, x)?;
        let w = g.input(weights.clone());
        let p = g.mul(y, w)?;
        let l = g.sum(p)?;
        Ok(g.value(l).data()[0])
    };

    let mut g = Graph::new(opts.train);
    g.corrupt_backward(opts.corrupt_backward);
    let x = g.leaf(input.clone(), true);
    let y = f(&mut g, store, x)?;
    let w = g.input(weights.clone());
    let p = g.mul(y, w)?;
    let l = g.sum(p)?;
    let grads = g.backward(l)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), worst_pair: (0.0, 0.0), checked: 0 };
    let mut record = |name: &str, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = name.to_string();
            report.worst_pair = (a, n);
        }
    };

    let coords = |n: usize, salt: u64| -> Vec<usize> {
        if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng::stream(opts.seed, "gradcheck-coords", salt), n, opts.max_coords).into_vec();
            v.sort_unstable();
            v
        }
    };

    let zeros_x = Tensor::zeros(input.shape().to_vec());
    let gx = grads.get(x).unwrap_or(&zeros_x);
    for i in coords(input.numel(), u64::MAX) {
        let mut plus = input.clone();
        plus.data_mut()[i] += opts.eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= opts.eps;
        let n = (scalar(&plus, store)? - scalar(&minus, store)?) / (2.0 * opts.eps);
        record("input", gx.data()[i], n);
    }

    if opts.check_params {
        let used: Vec<(ParamId, Var)> = g.param_vars().to_vec();
        for (id, var) in used {
            let param = store.get(id);
            if !param.trainable {
                continue;
            }
            let zeros = Tensor::zeros(param.value.shape().to_vec());
            let ga = grads.get(var).unwrap_or(&zeros);
            for i in coords(param.value.numel(), id.0 as u64) {
                let mut s = store.clone();
                s.get_mut(id).value.data_mut()[i] += opts.eps;
                let up = scalar(input, &s)?;
                s.get_mut(id).value.data_mut()[i] -= 2.0 * opts.eps;
                let down = scalar(input, &s)?;
                record(&param.name, ga.data()[i], (up - down) / (2.0 * opts.eps));
            }
        }
    }
    Ok(report)
}
