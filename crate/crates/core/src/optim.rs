//! Adam with bias correction.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};

use crate::nn::Scalar;
use crate::unet::{Grads, ModelParams};

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: BTreeMap<String, ArrayD<S>>,
    v: BTreeMap<String, ArrayD<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &Grads<S>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = S::from_f64c(self.learning_rate);
        let (b1s, b2s) = (S::from_f64c(b1), S::from_f64c(b2));
        let (c1s, c2s, eps) = (S::from_f64c(c1), S::from_f64c(c2), S::from_f64c(self.eps));
        for (name, g) in grads {
            let p = params
                .tensors
                .get_mut(name)
                .expect("gradient for unknown tensor");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1s * *m + (S::one() - b1s) * g;
                *v = b2s * *v + (S::one() - b2s) * g * g;
                let mhat = *m / c1s;
                let vhat = *v / c2s;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::{init_params, UnetConfig};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = UnetConfig {
            base_channels: 2,
            depth: 2,
            ..UnetConfig::default()
        };
        let mut params = init_params::<f64>(&cfg, 1).unwrap();
        let before = params.tensors["head.weight"].clone();
        let mut grads = Grads::new();
        grads.insert("head.weight".to_string(), before.mapv(|_| 0.5));
        let mut opt = Adam::new(1e-3);
        opt.step(&mut params, &grads);
        // With bias correction the first update is lr · g/|g| (up to eps).
        let diff = &before - &params.tensors["head.weight"];
        assert!(diff.iter().all(|d| (d - 1e-3).abs() < 1e-9));
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = UnetConfig {
            base_channels: 2,
            depth: 2,
            ..UnetConfig::default()
        };
        let mut params = init_params::<f64>(&cfg, 2).unwrap();
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let mut grads = Grads::new();
            grads.insert(
                "head.bias".to_string(),
                params.tensors["head.bias"].mapv(|b| 2.0 * (b - 3.0)),
            );
            opt.step(&mut params, &grads);
        }
        assert!(params.tensors["head.bias"]
            .iter()
            .all(|b| (b - 3.0).abs() < 1e-2));
    }
}
