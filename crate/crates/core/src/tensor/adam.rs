use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First/second moment estimates for every parameter of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One bias-corrected Adam update from the gradients held in `store`.
    /// Parameters with `requires_grad == false` are left untouched, and
    /// `train_rows` restricts the update to a row range.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters", self.m.len()),
                format!("{} parameters", store.len()),
            ));
        }
        for (p, m) in store.iter().zip(&self.m) {
            if p.value.len() != m.len() || p.grad.len() != m.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{} values for {}", m.len(), p.name),
                    format!("{:?}", p.value.shape()),
                ));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            let range = match &p.train_rows {
                Some(rows) => {
                    let cols = p.value.cols();
                    rows.start * cols..rows.end * cols
                }
                None => 0..p.value.len(),
            };
            let grad = &p.grad.data()[range.clone()];
            let vals = &mut p.value.data_mut()[range.clone()];
            for (((x, &g), mi), vi) in vals.iter_mut().zip(grad).zip(&mut m[range.clone()]).zip(&mut v[range]) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    fn one_param(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", "g", Tensor::new(vec![1], vec![x]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = one_param(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.7]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        for g in [0.003, -2.5, 40.0] {
            let mut s = one_param(1.0);
            s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
            let cfg = AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            };
            let mut adam = AdamState::new(cfg, &s);
            adam.step(&mut s).unwrap();
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            let got = s.iter().next().unwrap().value.data()[0];
            assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut s = one_param(1.0);
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &s,
        );
        for _ in 0..200 {
            s.zero_grad();
            let mut g = Graph::new();
            let b = s.bind(&mut g);
            let x = b[crate::tensor::ParamId(0)];
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum(sq);
            let mut grads = g.backward(loss).unwrap();
            s.accumulate(&b, &mut grads);
            adam.step(&mut s).unwrap();
        }
        let x = s.iter().next().unwrap().value.data()[0];
        assert!(x.abs() < 0.05, "x = {x}");
    }

    #[test]
    fn rows_outside_train_range_are_untouched() {
        let mut s = ParamStore::new();
        let id = s.add("e", "emb", Tensor::filled(&[3, 2], 1.0));
        {
            let p = s.get_mut(id);
            p.grad = Tensor::filled(&[3, 2], 1.0);
            p.train_rows = Some(2..3);
        }
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        let v = s.get(id).value.data();
        assert_eq!(&v[..4], &[1.0; 4]);
        assert!(v[4] < 1.0 && v[5] < 1.0);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let s = one_param(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        let mut bigger = s.clone();
        bigger.add("y", "g", Tensor::zeros(&[1]));
        assert!(adam.step(&mut bigger).is_err());
    }
}
