use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);

    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        let n = p.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        if m.len() != n {
            return Err(Error::shape("adam_step", p.shape(), &[m.len()]));
        }
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn one_param(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(1.0);
        let mut g = BTreeMap::new();
        g.insert("x".to_string(), Tensor::scalar(-3.7));
        let cfg = AdamConfig {
            lr: 0.05,
            eps: 0.0,
            ..Default::default()
        };
        adam_step(&mut p, &g, &mut AdamState::new(), &cfg).unwrap();
        assert!((p.get("x").unwrap().item() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(0.25);
        let mut g = BTreeMap::new();
        g.insert("x".to_string(), Tensor::scalar(0.0));
        let mut st = AdamState::new();
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.get("x").unwrap().item(), 0.25);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut p = one_param(0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        for _ in 0..500 {
            let mut tape = Tape::new();
            let x = tape.param(&p, "x").unwrap();
            let two = tape.constant(Tensor::scalar(2.0));
            let d = tape.sub(x, two).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq).unwrap();
            let g = tape.param_gradients(loss).unwrap();
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert!((p.get("x").unwrap().item() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = one_param(0.0);
        let mut g = BTreeMap::new();
        g.insert("x".to_string(), Tensor::zeros(&[2]));
        let err = adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "adam_step", .. }));
    }
}
