//! Finite-difference sweep over every block kind at small fixed shapes.
//!
//! ConvBlock is checked with batch statistics. The composite blocks are
//! checked with running statistics drawn at random, because batch
//! normalization over a handful of positions makes their finite
//! differences too curved for `eps = 1e-3`.

use rand::Rng as _;

use super::*;
use crate::rng;
use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport};

pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub kind: BlockKind,
    pub input_shape: Vec<usize>,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= GRAD_TOLERANCE
    }
}

/// Randomize every batch-norm affine and running-statistic tensor.
pub fn randomize_norm_state(store: &mut ParamStore<f32>, seed: u64) {
    let mut r = rng::stream(seed, "norm-state", 0);
    for p in store.iter_mut() {
        let range = if p.name.ends_with("bn.gamma") || p.name.ends_with("bn.running_var") {
            0.5..1.5
        } else if p.name.ends_with("bn.beta") || p.name.ends_with("bn.running_mean") {
            -0.2..0.2
        } else {
            continue;
        };
        for v in p.value.data_mut() {
            *v = r.gen_range(range.clone());
        }
    }
}

fn check_one<M: Module>(
    kind: BlockKind,
    seed: u64,
    shape: &[usize],
    train: bool,
    corrupt: bool,
    make: impl FnOnce(&mut Builder<'_>) -> M,
) -> Result<SuiteEntry> {
    let mut store = ParamStore::new();
    let mut r = rng::stream(seed, "suite-params", kind as u64);
    let m = make(&mut Builder::new(&mut store, &mut r));
    if !train {
        randomize_norm_state(&mut store, seed);
    }
    let s64 = store.cast::<f64>();
    let x = Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng::stream(seed, "suite-input", kind as u64));
    let opts = GradCheckOptions { train, seed, corrupt_backward: corrupt, ..Default::default() };
    let report = grad_check(|g, s, v| m.forward(g, s, v), &x, &s64, &opts)?;
    Ok(SuiteEntry { kind, input_shape: shape.to_vec(), report })
}

/// One entry per [`BlockKind`], in [`BlockKind::ALL`] order. `corrupt`
/// perturbs the SiLU backward rule, which every block uses.
pub fn gradient_suite(seed: u64, corrupt: bool) -> Result<Vec<SuiteEntry>> {
    let prior = [0.0, 0.0, (50.0f32 / 16.0).ln(), (50.0f32 / 16.0).ln(), -4.6];
    let mut out = Vec::with_capacity(BlockKind::ALL.len());
    for kind in BlockKind::ALL {
        let e = match kind {
            BlockKind::ConvBlock => check_one(kind, seed, &[2, 3, 6, 6], true, corrupt, |b| ConvBlock::new(b, 3, 4, 3, 2))?,
            BlockKind::C3k2 => check_one(kind, seed, &[2, 8, 5, 5], false, corrupt, |b| C3k2::new(b, 8, 8, 2, true))?,
            BlockKind::Sppf => check_one(kind, seed, &[1, 8, 7, 7], false, corrupt, |b| Sppf::new(b, 8, 8))?,
            BlockKind::C2psa => check_one(kind, seed, &[2, 8, 3, 4], false, corrupt, |b| C2psa::new(b, 8, 4))?,
            BlockKind::CoordAtt => check_one(kind, seed, &[2, 16, 4, 5], false, corrupt, |b| CoordAtt::new(b, 16, 16))?,
            BlockKind::DetectHead => check_one(kind, seed, &[1, 64, 8, 8], false, corrupt, |b| DetectHead::new(b, 64, prior))?,
        };
        out.push(e);
    }
    Ok(out)
}
