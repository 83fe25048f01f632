use std::collections::BTreeMap;

use gsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update. `grads` must name exactly the trainable tensors.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in grads {
            let p = store.get(name)?;
            if !p.trainable {
                return Err(Error::Contract(format!("gradient supplied for frozen tensor {name}")));
            }
            if p.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} is {:?}, tensor is {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        let trainable: Vec<String> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect();
        if let Some(missing) = trainable.iter().find(|n| !grads.contains_key(*n)) {
            return Err(Error::Contract(format!("no gradient for trainable tensor {missing}")));
        }
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let decay = T::one() - lr * T::lit(c.weight_decay);
        let eps = T::lit(c.eps);
        for name in trainable {
            let g = &grads[&name];
            let p = store.tensor_mut(&name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v.entry(name).or_insert_with(|| vec![T::zero(); g.len()]);
            for i in 0..g.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] = p.data[i] * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new("s", 0);
        s.insert("p", Tensor::filled(1, 1, v), true).unwrap();
        s
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::filled(1, 1, g))])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        opt.step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.tensor("p").unwrap().data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.25] {
            let mut s = scalar_store(1.0);
            let mut opt = AdamW::new(AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            });
            opt.step(&mut s, &grad(g)).unwrap();
            let delta = 1.0 - s.tensor("p").unwrap().data[0];
            assert!((delta / (1e-3 * f64::signum(g)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn decay_shrinks_by_lr_times_wd() {
        let mut s = scalar_store(2.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        });
        opt.step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.tensor("p").unwrap().data[0], 2.0 * (1.0 - 0.01 * 0.5));
    }

    #[test]
    fn frozen_and_missing_gradients_are_contract_violations() {
        let mut s = scalar_store(1.0);
        s.insert("f", Tensor::filled(1, 1, 1.0), false).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut g = grad(1.0);
        g.insert("f".into(), Tensor::filled(1, 1, 1.0));
        assert!(matches!(opt.step(&mut s, &g), Err(Error::Contract(_))));
        assert!(matches!(opt.step(&mut s, &BTreeMap::new()), Err(Error::Contract(_))));
        assert_eq!(s.tensor("f").unwrap().data[0], 1.0);
    }
}
