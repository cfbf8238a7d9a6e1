use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.937, weight_decay: 0.0005 }
    }
}

/// One SGD update with coupled weight decay, then clears gradients:
///
/// ```text
/// g' = g + wd·p
/// buf = momentum·buf + g'
/// p  -= lr·buf
/// ```
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, cfg: &SgdConfig) -> Result<()> {
    if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    let (lr, mom, wd) = (T::from_f64(cfg.lr), T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    for p in store.iter_mut().filter(|p| p.trainable) {
        let grad = p.grad.take().expect("checked above");
        for ((v, b), &g) in p.value.data_mut().iter_mut().zip(p.momentum_buffer.iter_mut()).zip(grad.data()) {
            let g = g + wd * *v;
            *b = mom * *b + g;
            *v = *v - lr * *b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(p: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(p), true);
        s.get_mut(id).grad = Some(Tensor::scalar(g));
        s
    }

    #[test]
    fn vanilla_step() {
        let mut s = single(1.0, 0.1);
        let cfg = SgdConfig { lr: 0.01, momentum: 0.0, weight_decay: 0.0 };
        sgd_step(&mut s, &cfg).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).value.data()[0], 1.0 - 0.01 * 0.1);
        assert!(s.get(s.find("w").unwrap()).grad.is_none());
    }

    #[test]
    fn coupled_weight_decay() {
        let mut s = single(1.0, 0.1);
        let cfg = SgdConfig { lr: 0.01, momentum: 0.0, weight_decay: 0.0005 };
        sgd_step(&mut s, &cfg).unwrap();
        let v = s.get(s.find("w").unwrap()).value.data()[0];
        assert!((v - 0.998995).abs() < 1e-12, "{v}");
    }

    #[test]
    fn momentum_accumulates() {
        let mut s = single(0.0, 1.0);
        let id = s.find("w").unwrap();
        let cfg = SgdConfig { lr: 0.01, momentum: 0.937, weight_decay: 0.0 };
        sgd_step(&mut s, &cfg).unwrap();
        s.get_mut(id).grad = Some(Tensor::scalar(1.0));
        sgd_step(&mut s, &cfg).unwrap();
        let v = s.get(id).value.data()[0];
        assert!((v + 0.02937).abs() < 1e-12, "{v}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::scalar(1.0), true);
        s.add("running", Tensor::scalar(1.0), false);
        let err = sgd_step(&mut s, &SgdConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "a"));
    }
}
