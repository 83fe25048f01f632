//! Low-rank adapters `W + (α/r)·(B·A)ᵀ` on `x·W` weight matrices.

use gsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::params::{ParamStore, INIT_STD};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 8.0 }
    }
}

/// Adapters for a set of target weights, held in their own store.
///
/// For a target `W` of shape `d_in×d_out` the store holds `{W}.lora_a`
/// (`r×d_in`, seeded normal) and `{W}.lora_b` (`d_out×r`, zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Lora<T> {
    pub cfg: LoraConfig,
    pub targets: Vec<String>,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Lora<T> {
    pub fn scale(&self) -> f64 {
        self.cfg.alpha / self.cfg.rank as f64
    }

    /// Names of the `(A, B)` adapter tensors for `target`, if adapted.
    pub fn adapter_names(&self, target: &str) -> Option<(String, String)> {
        self.targets
            .iter()
            .any(|t| t == target)
            .then(|| (format!("{target}.lora_a"), format!("{target}.lora_b")))
    }

    /// Adapter parameter count: `r·(d_in + d_out)` per target.
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Rebuild from a saved adapter store.
    pub fn from_store(cfg: LoraConfig, store: ParamStore<T>) -> Result<Self> {
        let targets: Vec<String> = store
            .names()
            .filter_map(|n| n.strip_suffix(".lora_a").map(str::to_string))
            .collect();
        for t in &targets {
            store.get(&format!("{t}.lora_b"))?;
        }
        Ok(Self { cfg, targets, store })
    }
}

/// Attach adapters to `targets` of `params` and freeze every base tensor.
pub fn attach_lora<T: Scalar>(
    params: &mut ParamStore<T>,
    targets: &[String],
    cfg: LoraConfig,
    seed: u64,
) -> Result<Lora<T>> {
    if cfg.rank == 0 {
        return Err(Error::InvalidParameter("LoRA rank must be >= 1".into()));
    }
    let mut store = ParamStore::new(format!("{}.lora", params.id), seed);
    for t in targets {
        let w = params
            .get(t)
            .map_err(|_| Error::InvalidParameter(format!("unknown LoRA target {t}")))?;
        let (d_in, d_out) = w.value.shape();
        store.add_normal(&format!("{t}.lora_a"), cfg.rank, d_in, INIT_STD)?;
        store.add_zeros(&format!("{t}.lora_b"), d_out, cfg.rank)?;
    }
    params.freeze_all();
    Ok(Lora {
        cfg,
        targets: targets.to_vec(),
        store,
    })
}

/// Base parameters with every adapter folded into its weight.
pub fn merge_lora<T: Scalar>(params: &ParamStore<T>, lora: &Lora<T>) -> Result<ParamStore<T>> {
    let mut merged = params.clone();
    let s = T::lit(lora.scale());
    for t in &lora.targets {
        let (an, bn) = lora.adapter_names(t).expect("listed target");
        let a = lora.store.tensor(&an)?;
        let b = lora.store.tensor(&bn)?;
        // (B·A)ᵀ = Aᵀ·Bᵀ, shape d_in×d_out.
        let delta: Tensor<T> = a.matmul_tn(&b.transpose())?;
        let w = merged.tensor_mut(t)?;
        if w.shape() != delta.shape() {
            return Err(Error::Shape(format!("adapter for {t} has the wrong shape")));
        }
        for (x, &d) in w.data.iter_mut().zip(&delta.data) {
            *x += s * d;
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{init_linear, Layers};
    use crate::tape::Tape;

    fn base() -> ParamStore<f64> {
        let mut s = ParamStore::new("m", 5);
        init_linear(&mut s, "l", 6, 3, false).unwrap();
        s
    }

    #[test]
    fn attach_counts_and_freezes() {
        let mut p = base();
        let l = attach_lora(&mut p, &["l.w".to_string()], LoraConfig::default(), 1).unwrap();
        assert_eq!(l.param_count(), 4 * (6 + 3));
        assert!(p.iter().all(|(_, t)| !t.trainable));
        assert!(attach_lora(&mut p, &["nope".to_string()], LoraConfig::default(), 1).is_err());
    }

    #[test]
    fn init_delta_is_exactly_zero_and_merge_matches() {
        let mut p = base();
        let mut lora = attach_lora(&mut p, &["l.w".to_string()], LoraConfig::default(), 1).unwrap();
        let x = Tensor::from_vec(2, 6, (0..12).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let run = |p: &ParamStore<f64>, l: Option<&Lora<f64>>| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = Layers::with_lora(p, l).linear(&mut t, "l", xv).unwrap();
            t.value(y).clone()
        };
        assert_eq!(run(&p, Some(&lora)), run(&p, None));
        lora.store
            .tensor_mut("l.w.lora_b")
            .unwrap()
            .data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.4);
        let merged = merge_lora(&p, &lora).unwrap();
        assert!(run(&p, Some(&lora)).max_abs_diff(&run(&merged, None)) < 1e-12);
    }
}
