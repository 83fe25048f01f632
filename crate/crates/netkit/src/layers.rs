//! Pre-norm transformer blocks and linear layers over a [`Tape`].
//!
//! Parameters follow a naming scheme rooted at a caller-chosen prefix:
//! `{p}.w` / `{p}.b` for linear layers, `{p}.gamma` / `{p}.beta` for layer
//! norms. Attention blocks own `{p}.ln`, `{p}.q`, `{p}.k`, `{p}.v`, `{p}.o`
//! and, for cross-attention, `{p}.ln_ctx`. MLP blocks own `{p}.ln`,
//! `{p}.fc1`, `{p}.fc2`.

use gsd_core::Result;

use crate::lora::Lora;
use crate::params::{ParamStore, INIT_STD};
use crate::scalar::Scalar;
use crate::tape::{AttnLayout, Tape, Var};

pub const MLP_EXPANSION: usize = 4;

/// Parameters (and optional adapters) a forward pass reads from.
#[derive(Clone, Copy)]
pub struct Layers<'a, T> {
    pub params: &'a ParamStore<T>,
    pub lora: Option<&'a Lora<T>>,
}

impl<'a, T: Scalar> Layers<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self { params, lora: None }
    }

    pub fn with_lora(params: &'a ParamStore<T>, lora: Option<&'a Lora<T>>) -> Self {
        Self { params, lora }
    }

    pub fn param(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        tape.param(self.params, name)
    }

    /// `x · W (+ LoRA delta) + b`.
    pub fn linear(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        let wname = format!("{name}.w");
        let w = tape.param(self.params, &wname)?;
        let mut y = tape.matmul(x, w)?;
        if let Some(lora) = self.lora {
            if let Some((a, b)) = lora.adapter_names(&wname) {
                let a = tape.param(&lora.store, &a)?;
                let b = tape.param(&lora.store, &b)?;
                let xa = tape.matmul_nt(x, a)?;
                let delta = tape.matmul_nt(xa, b)?;
                let delta = tape.scale(delta, T::lit(lora.scale()));
                y = tape.add(y, delta)?;
            }
        }
        let b = tape.param(self.params, &format!("{name}.b"))?;
        tape.add_row(y, b)
    }

    pub fn layernorm(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        let g = tape.param(self.params, &format!("{name}.gamma"))?;
        let b = tape.param(self.params, &format!("{name}.beta"))?;
        tape.layernorm(x, g, b)
    }

    /// `x + O(Attention(Q(LN x), K(c), V(c)))` where `c` is the normalized
    /// context when given and `LN x` otherwise.
    pub fn attention_block(
        &self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        context: Option<Var>,
        layout: AttnLayout,
    ) -> Result<Var> {
        let h = self.layernorm(tape, &format!("{prefix}.ln"), x)?;
        let src = match context {
            Some(c) => self.layernorm(tape, &format!("{prefix}.ln_ctx"), c)?,
            None => h,
        };
        let q = self.linear(tape, &format!("{prefix}.q"), h)?;
        let k = self.linear(tape, &format!("{prefix}.k"), src)?;
        let v = self.linear(tape, &format!("{prefix}.v"), src)?;
        let a = tape.attention(q, k, v, layout)?;
        let o = self.linear(tape, &format!("{prefix}.o"), a)?;
        tape.add(x, o)
    }

    /// `x + FC2(GELU(FC1(LN x)))`.
    pub fn mlp_block(&self, tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.layernorm(tape, &format!("{prefix}.ln"), x)?;
        let h = self.linear(tape, &format!("{prefix}.fc1"), h)?;
        let h = tape.gelu(h);
        let h = self.linear(tape, &format!("{prefix}.fc2"), h)?;
        tape.add(x, h)
    }
}

/// Linear layer: normal weights (or zeros when `zero`), zero bias.
pub fn init_linear<T: Scalar>(s: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, zero: bool) -> Result<()> {
    if zero {
        s.add_zeros(&format!("{name}.w"), d_in, d_out)?;
    } else {
        s.add_normal(&format!("{name}.w"), d_in, d_out, INIT_STD)?;
    }
    s.add_zeros(&format!("{name}.b"), 1, d_out)
}

pub fn init_layernorm<T: Scalar>(s: &mut ParamStore<T>, name: &str, d: usize) -> Result<()> {
    s.add_const(&format!("{name}.gamma"), 1, d, 1.0)?;
    s.add_zeros(&format!("{name}.beta"), 1, d)
}

/// Attention block of width `d`; `d_ctx` is the context width for
/// cross-attention. The output projection starts at zero.
pub fn init_attention<T: Scalar>(s: &mut ParamStore<T>, prefix: &str, d: usize, d_ctx: Option<usize>) -> Result<()> {
    init_layernorm(s, &format!("{prefix}.ln"), d)?;
    let kv_in = match d_ctx {
        Some(c) => {
            init_layernorm(s, &format!("{prefix}.ln_ctx"), c)?;
            c
        }
        None => d,
    };
    init_linear(s, &format!("{prefix}.q"), d, d, false)?;
    init_linear(s, &format!("{prefix}.k"), kv_in, d, false)?;
    init_linear(s, &format!("{prefix}.v"), kv_in, d, false)?;
    init_linear(s, &format!("{prefix}.o"), d, d, true)
}

/// MLP block with expansion [`MLP_EXPANSION`]; the second layer starts at zero.
pub fn init_mlp<T: Scalar>(s: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<()> {
    init_layernorm(s, &format!("{prefix}.ln"), d)?;
    init_linear(s, &format!("{prefix}.fc1"), d, MLP_EXPANSION * d, false)?;
    init_linear(s, &format!("{prefix}.fc2"), MLP_EXPANSION * d, d, true)
}
