use std::collections::BTreeMap;

use super::{NnError, ParameterStore};

/// Classic momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self, NnError> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be ≥ 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NnError::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    /// Applies the gradients stored in `params`. Parameters without a
    /// gradient are left alone. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut ParameterStore) -> Result<(), NnError> {
        for (name, t) in params.iter() {
            if let Some(g) = &t.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFiniteGradient(name.clone()));
                }
            }
        }
        for (name, t) in params.iter_mut() {
            let Some(g) = t.grad.take() else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((p, v), g) in t.data.iter_mut().zip(v.iter_mut()).zip(&g) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}

/// One stateless momentum step; `velocity` is carried by the caller.
pub fn sgd_step(
    params: &mut ParameterStore,
    velocity: &mut BTreeMap<String, Vec<f64>>,
    lr: f64,
    momentum: f64,
) -> Result<(), NnError> {
    let mut opt = Sgd::new(lr, momentum)?;
    opt.velocity = std::mem::take(velocity);
    let res = opt.step(params);
    *velocity = opt.velocity;
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(p: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::scalar(p));
        s
    }

    fn set_grad(s: &mut ParameterStore, g: f64) {
        s.get_mut("p").unwrap().grad = Some(vec![g]);
    }

    #[test]
    fn plain_step() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 2.0);
        let mut v = BTreeMap::new();
        sgd_step(&mut s, &mut v, 0.1, 0.0).unwrap();
        assert!((s.get("p").unwrap().data[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut s = scalar_store(1.5);
        set_grad(&mut s, -7.0);
        Sgd::new(0.0, 0.9).unwrap().step(&mut s).unwrap();
        assert_eq!(s.get("p").unwrap().data[0], 1.5);
    }

    #[test]
    fn momentum_on_quadratic_bowl() {
        // f(p) = p², g = 2p; the iteration contracts by √μ per step
        let run = |steps| {
            let mut s = scalar_store(1.0);
            let mut opt = Sgd::new(0.1, 0.9).unwrap();
            for _ in 0..steps {
                let p = s.get("p").unwrap().data[0];
                set_grad(&mut s, 2.0 * p);
                opt.step(&mut s).unwrap();
            }
            s.get("p").unwrap().data[0]
        };
        let (mut p, mut v) = (1.0f64, 0.0f64);
        for _ in 0..100 {
            v = 0.9 * v + 2.0 * p;
            p -= 0.1 * v;
        }
        assert_eq!(run(100), p);
        assert!(p.abs() < 0.9f64.sqrt().powi(100));
        assert!(run(200).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_is_rejected_atomically() {
        let mut s = scalar_store(1.0);
        s.insert("a", Tensor::scalar(2.0));
        s.get_mut("a").unwrap().grad = Some(vec![1.0]);
        set_grad(&mut s, f64::NAN);
        let err = Sgd::new(0.1, 0.0).unwrap().step(&mut s).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(n) if n == "p"));
        assert_eq!(s.get("a").unwrap().data[0], 2.0);
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(Sgd::new(-1.0, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
