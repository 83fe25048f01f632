//! Toy multi-view denoiser predicting clean latents.
//!
//! Input tokens are the channel concatenation of the noisy latents and the
//! conditioning image's latent (broadcast to every view), embedded and
//! combined with a timestep embedding, a per-view pose embedding and a 2D
//! position code. Blocks alternate self-attention over all views' tokens,
//! cross-attention to the conditioning features and an MLP.

use gsd_core::camera::{encode_pose, Camera};
use gsd_core::codec::{encode_views, LatentGrid};
use gsd_core::image::ImageBuffer;
use gsd_core::{Error, Result};
use gsd_netkit::layers::{init_attention, init_layernorm, init_linear, init_mlp};
use gsd_netkit::{AttnLayout, Layers, Lora, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::features::{sinusoid_1d, sinusoid_2d, FeatureTokens};
use crate::schedule::{renoise, NoiseSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub patch: usize,
    pub views: usize,
    pub pose_freqs: usize,
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 128,
            heads: 4,
            patch: 4,
            views: 16,
            pose_freqs: 4,
            cond_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.width % self.heads != 0
            || self.width % 4 != 0
            || self.patch == 0
            || self.views == 0
            || self.pose_freqs == 0
            || self.cond_dim == 0
        {
            return Err(Error::InvalidParameter(format!("invalid denoiser config {self:?}")));
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }
}

/// Names of every attention projection weight (self and cross, Q/K/V/O).
pub fn lora_targets(cfg: &DenoiserConfig) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..cfg.layers {
        for kind in ["self", "cross"] {
            for p in ["q", "k", "v", "o"] {
                out.push(format!("block.{i}.{kind}.{p}.w"));
            }
        }
    }
    out
}

pub fn init_denoiser<T: Scalar>(cfg: &DenoiserConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let (c, d) = (cfg.latent_channels(), cfg.width);
    let mut s = ParamStore::new("denoiser", seed);
    init_linear(&mut s, "in", 2 * c, d, false)?;
    init_linear(&mut s, "time", d, d, false)?;
    init_linear(&mut s, "pose", 4 * cfg.pose_freqs, d, false)?;
    for i in 0..cfg.layers {
        init_attention(&mut s, &format!("block.{i}.self"), d, None)?;
        init_attention(&mut s, &format!("block.{i}.cross"), d, Some(cfg.cond_dim))?;
        init_mlp(&mut s, &format!("block.{i}.mlp"), d)?;
    }
    init_layernorm(&mut s, "out.ln", d)?;
    init_linear(&mut s, "out", d, c, false)?;
    Ok(s)
}

/// Per-sample conditioning shared by every denoising step.
#[derive(Clone, Debug)]
pub struct DenoiserInputs<T> {
    /// `(h·w)×C` latent of the conditioning image.
    pub cond_latent: Tensor<T>,
    pub cond_tokens: Tensor<T>,
    /// `N×4K` pose encodings.
    pub poses: Tensor<T>,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> DenoiserInputs<T> {
    pub fn new(
        cfg: &DenoiserConfig,
        image: &ImageBuffer<T>,
        cond: &FeatureTokens<T>,
        cameras: &[Camera<T>],
    ) -> Result<Self> {
        cfg.validate()?;
        if cameras.len() != cfg.views {
            return Err(Error::Shape(format!(
                "{} cameras for a {}-view denoiser",
                cameras.len(),
                cfg.views
            )));
        }
        if cond.dim() != cfg.cond_dim || cond.is_empty() {
            return Err(Error::Shape(format!(
                "conditioning tokens of width {}, denoiser expects {}",
                cond.dim(),
                cfg.cond_dim
            )));
        }
        let z = encode_views::<T, T>(std::slice::from_ref(image), cfg.patch)?;
        let mut poses = Tensor::zeros(cfg.views, 4 * cfg.pose_freqs);
        for (v, cam) in cameras.iter().enumerate() {
            poses.row_mut(v).copy_from_slice(&encode_pose(cam, cfg.pose_freqs)?.0);
        }
        Ok(Self {
            cond_latent: Tensor::from_vec(z.tokens_per_view(), z.channels, z.data)?,
            cond_tokens: cond.tokens.clone(),
            poses,
            height: z.height,
            width: z.width,
        })
    }

    /// Empty latent grid of the shape the denoiser works on.
    pub fn grid(&self, cfg: &DenoiserConfig) -> Result<LatentGrid<T>> {
        LatentGrid::zeros(cfg.views, self.height, self.width, cfg.patch)
    }
}

/// Clean-latent prediction for `z_t` (a `(N·h·w)×C` tape value).
pub fn denoiser_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    net: Layers<'_, T>,
    cfg: &DenoiserConfig,
    inputs: &DenoiserInputs<T>,
    z_t: Var,
    t: usize,
) -> Result<Var> {
    let n = cfg.views;
    let hw = inputs.height * inputs.width;
    let d = cfg.width;
    if tape.value(z_t).shape() != (n * hw, cfg.latent_channels()) {
        return Err(Error::Shape(format!(
            "noisy latents are {:?}, denoiser expects {}x{}",
            tape.value(z_t).shape(),
            n * hw,
            cfg.latent_channels()
        )));
    }
    if let Some(lora) = net.lora {
        if let Some(bad) = lora.targets.iter().find(|t| !net.params.contains(t)) {
            return Err(Error::InvalidParameter(format!("adapter targets unknown tensor {bad}")));
        }
    }
    let mut cond = Tensor::zeros(n * hw, cfg.latent_channels());
    for v in 0..n {
        cond.data[v * inputs.cond_latent.len()..(v + 1) * inputs.cond_latent.len()]
            .copy_from_slice(&inputs.cond_latent.data);
    }
    let cond = tape.constant(cond);
    let x = tape.concat_cols(z_t, cond)?;
    let mut x = net.linear(tape, "in", x)?;
    let te = tape.constant(sinusoid_1d(t as f64, d));
    let te = net.linear(tape, "time", te)?;
    x = tape.add_row(x, te)?;
    let poses = tape.constant(inputs.poses.clone());
    let pe = net.linear(tape, "pose", poses)?;
    x = tape.add_group_rows(x, pe)?;
    let pos = tape.constant(sinusoid_2d(inputs.height, inputs.width, d));
    x = tape.add_tiled(x, pos)?;
    let ctx = tape.constant(inputs.cond_tokens.clone());
    let global = AttnLayout::global(cfg.heads);
    for i in 0..cfg.layers {
        x = net.attention_block(tape, &format!("block.{i}.self"), x, None, global)?;
        x = net.attention_block(tape, &format!("block.{i}.cross"), x, Some(ctx), global)?;
        x = net.mlp_block(tape, &format!("block.{i}.mlp"), x)?;
    }
    let x = net.layernorm(tape, "out.ln", x)?;
    net.linear(tape, "out", x)
}

/// One denoiser evaluation outside of training.
pub fn denoiser_forward<T: Scalar>(
    params: &ParamStore<T>,
    lora: Option<&Lora<T>>,
    cfg: &DenoiserConfig,
    inputs: &DenoiserInputs<T>,
    z_t: &LatentGrid<T>,
    t: usize,
) -> Result<LatentGrid<T>> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_vec(z_t.views * z_t.tokens_per_view(), z_t.channels, z_t.data.clone())?);
    let out = denoiser_forward_tape(&mut tape, Layers::with_lora(params, lora), cfg, inputs, z, t)?;
    z_t.with_data(tape.value(out).data.clone())
}

/// Seeded standard normal grid shaped like `like`.
pub fn gaussian_noise<T: Scalar>(like: &LatentGrid<T>, seed: u64) -> LatentGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..like.data.len())
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v)
        })
        .collect();
    LatentGrid { data, ..like.clone() }
}

/// Deterministic sampler: from seeded noise at `t = T`, predict the clean
/// latents and move to the next lower timestep along the schedule using the
/// noise implied by the prediction. Returns the final clean prediction.
pub fn sample<T: Scalar>(
    params: &ParamStore<T>,
    lora: Option<&Lora<T>>,
    cfg: &DenoiserConfig,
    schedule: &NoiseSchedule,
    inputs: &DenoiserInputs<T>,
    steps: usize,
    seed: u64,
) -> Result<LatentGrid<T>> {
    let ts = schedule.sampling_timesteps(steps)?;
    let mut z = gaussian_noise(&inputs.grid(cfg)?, seed);
    for pair in ts.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let x0 = denoiser_forward(params, lora, cfg, inputs, &z, t)?;
        if t_prev == 0 {
            return Ok(x0);
        }
        z.data = renoise(schedule, &z.data, &x0.data, t, t_prev);
    }
    unreachable!("timestep list ends at zero")
}
