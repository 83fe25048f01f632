//! Gaussian splatting decoder: a transformer trunk over multi-view latent
//! tokens with cross-attention to conditioning features, a pixel-shuffle
//! upsampler and a per-pixel head that places one Gaussian on each
//! upsampled pixel's camera ray.

use gsd_core::camera::{encode_pose, Camera};
use gsd_core::codec::LatentGrid;
use gsd_core::gaussian::{Gaussian3D, GaussianScene, MAX_SCALE, MIN_SCALE};
use gsd_core::linalg::{dot3, norm3, Vec3};
use gsd_core::raster::GaussianGrad;
use gsd_core::scalar::sigmoid;
use gsd_core::{Error, Result};
use gsd_netkit::layers::{init_attention, init_layernorm, init_linear, init_mlp};
use gsd_netkit::{AttnLayout, Layers, ParamStore, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::features::{sinusoid_2d, FeatureTokens};

/// Raw head outputs per Gaussian; the last two are reserved.
pub const RAW_CHANNELS: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    /// Total upsampling factor, a power of two.
    pub upsample: usize,
    /// Latent patch size (pixels per latent cell edge).
    pub patch: usize,
    pub near: f64,
    pub far: f64,
    pub views: usize,
    pub pose_freqs: usize,
    /// Width of the conditioning tokens.
    pub cond_dim: usize,
    /// Upsampler self-attention runs within this many horizontal bands per view.
    pub upsample_bands: usize,
    /// Initial bias of the log-scale head channels.
    pub init_log_scale: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 256,
            heads: 4,
            upsample: 2,
            patch: 4,
            near: 1.8,
            far: 4.2,
            views: 16,
            pose_freqs: 4,
            cond_dim: 64,
            upsample_bands: 1,
            init_log_scale: 0.03f64.ln(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.layers == 0 {
            return bad("decoder needs at least one trunk layer".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.width % 4 != 0 {
            return bad(format!(
                "width {} must be divisible by 4 and by heads {}",
                self.width, self.heads
            ));
        }
        if !self.upsample.is_power_of_two() {
            return bad(format!("upsample factor {} is not a power of two", self.upsample));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far, got {} and {}", self.near, self.far));
        }
        if self.views == 0 || self.patch == 0 || self.pose_freqs == 0 || self.cond_dim == 0 || self.upsample_bands == 0 {
            return bad(format!("degenerate decoder config {self:?}"));
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn upsample_stages(&self) -> usize {
        self.upsample.trailing_zeros() as usize
    }

    /// Gaussians emitted for an `h×w` latent grid.
    pub fn gaussian_count(&self, h: usize, w: usize) -> usize {
        self.views * h * self.upsample * w * self.upsample
    }
}

/// Fresh decoder parameters.
pub fn init_decoder<T: Scalar>(cfg: &DecoderConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let d = cfg.width;
    let mut s = ParamStore::new("decoder", seed);
    init_linear(&mut s, "embed", cfg.latent_channels(), d, false)?;
    init_linear(&mut s, "pose", 4 * cfg.pose_freqs, d, false)?;
    for i in 0..cfg.layers {
        init_attention(&mut s, &format!("trunk.{i}.self"), d, None)?;
        init_attention(&mut s, &format!("trunk.{i}.cross"), d, Some(cfg.cond_dim))?;
        init_mlp(&mut s, &format!("trunk.{i}.mlp"), d)?;
    }
    for st in 0..cfg.upsample_stages() {
        init_linear(&mut s, &format!("up.{st}.expand"), d, 4 * d, false)?;
        init_attention(&mut s, &format!("up.{st}.attn"), d, None)?;
        init_mlp(&mut s, &format!("up.{st}.mlp"), d)?;
    }
    init_layernorm(&mut s, "head.ln", d)?;
    init_linear(&mut s, "head", d, RAW_CHANNELS, false)?;
    let b = s.tensor_mut("head.b")?;
    for c in 1..4 {
        b.data[c] = T::lit(cfg.init_log_scale);
    }
    Ok(s)
}

/// Converts 14 raw channels into a Gaussian on the ray `origin + d·dir`.
pub fn head_activate<T: Scalar>(raw: &[T], origin: Vec3<T>, dir: Vec3<T>, near: T, far: T) -> Gaussian3D<T> {
    let d = near + sigmoid(raw[0]) * (far - near);
    let (lo, hi) = (T::lit(MIN_SCALE.ln()), T::lit(MAX_SCALE.ln()));
    Gaussian3D {
        mean: [0, 1, 2].map(|i| origin[i] + d * dir[i]),
        log_scale: [1, 2, 3].map(|i| raw[i].max(lo).min(hi)),
        rotation: head_quat(raw).0,
        opacity_logit: raw[8],
        color: [9, 10, 11].map(|i| sigmoid(raw[i])),
    }
}

/// Normalized `raw₄..₇ + (1,0,0,0)` and the pre-normalization norm.
fn head_quat<T: Scalar>(raw: &[T]) -> ([T; 4], T) {
    let q = [raw[4] + T::one(), raw[5], raw[6], raw[7]];
    let n = q.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n > T::lit(1e-8) {
        (q.map(|v| v / n), n)
    } else {
        ([T::one(), T::zero(), T::zero(), T::zero()], T::zero())
    }
}

/// Reverse of [`head_activate`] given the Gaussian's parameter gradient.
pub fn head_backward<T: Scalar>(raw: &[T], dir: Vec3<T>, near: T, far: T, g: &GaussianGrad<T>) -> [T; RAW_CHANNELS] {
    let mut out = [T::zero(); RAW_CHANNELS];
    let s = sigmoid(raw[0]);
    out[0] = dot3(&g.mean, &dir) * (far - near) * s * (T::one() - s);
    let (lo, hi) = (T::lit(MIN_SCALE.ln()), T::lit(MAX_SCALE.ln()));
    for i in 0..3 {
        if raw[1 + i] > lo && raw[1 + i] < hi {
            out[1 + i] = g.log_scale[i];
        }
    }
    let (q, n) = head_quat(raw);
    if n > T::zero() {
        let qd: T = (0..4).map(|i| q[i] * g.rotation[i]).sum();
        for i in 0..4 {
            out[4 + i] = (g.rotation[i] - q[i] * qd) / n;
        }
    }
    out[8] = g.opacity_logit;
    for i in 0..3 {
        let c = sigmoid(raw[9 + i]);
        out[9 + i] = g.color[i] * c * (T::one() - c);
    }
    out
}

/// World rays through the centers of each view's upsampled pixels, in
/// Gaussian order (view, row, column).
pub fn pixel_rays<T: Scalar>(cfg: &DecoderConfig, cameras: &[Camera<T>], h: usize, w: usize) -> Vec<(Vec3<T>, Vec3<T>)> {
    let (fh, fw) = (h * cfg.upsample, w * cfg.upsample);
    let mut rays = Vec::with_capacity(cameras.len() * fh * fw);
    for cam in cameras {
        let sy = T::from_usize_lossy(cam.height) / T::from_usize_lossy(fh);
        let sx = T::from_usize_lossy(cam.width) / T::from_usize_lossy(fw);
        for y in 0..fh {
            for x in 0..fw {
                let u = (T::from_usize_lossy(x) + T::lit(0.5)) * sx;
                let v = (T::from_usize_lossy(y) + T::lit(0.5)) * sy;
                rays.push(cam.pixel_ray(u, v));
            }
        }
    }
    rays
}

/// A decoder forward pass recorded on a tape.
pub struct DecoderTrace<T> {
    /// `gaussians × 14` raw head outputs.
    pub raw: Var,
    pub rays: Vec<(Vec3<T>, Vec3<T>)>,
    pub scene: GaussianScene<T>,
}

/// Runs the decoder on `latents` (a `(N·h·w)×C` tape value laid out like a
/// [`LatentGrid`]).
#[allow(clippy::too_many_arguments)]
pub fn decoder_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
    latents: Var,
    grid: (usize, usize),
    cond: &FeatureTokens<T>,
    cameras: &[Camera<T>],
) -> Result<DecoderTrace<T>> {
    cfg.validate()?;
    let (h, w) = grid;
    let n = cfg.views;
    let d = cfg.width;
    if cameras.len() != n {
        return Err(Error::Shape(format!("{} cameras for a {n}-view decoder", cameras.len())));
    }
    if tape.value(latents).shape() != (n * h * w, cfg.latent_channels()) {
        return Err(Error::Shape(format!(
            "latents are {:?}, decoder expects {}x{}",
            tape.value(latents).shape(),
            n * h * w,
            cfg.latent_channels()
        )));
    }
    if let Some(c) = cameras.iter().find(|c| c.width != w * cfg.patch || c.height != h * cfg.patch) {
        return Err(Error::Shape(format!(
            "camera is {}x{}, latents cover {}x{}",
            c.height,
            c.width,
            h * cfg.patch,
            w * cfg.patch
        )));
    }
    if cond.dim() != cfg.cond_dim || cond.is_empty() {
        return Err(Error::Shape(format!(
            "{} conditioning tokens of width {}, decoder expects width {}",
            cond.len(),
            cond.dim(),
            cfg.cond_dim
        )));
    }
    let net = Layers::new(params);
    let global = AttnLayout::global(cfg.heads);

    let mut x = net.linear(tape, "embed", latents)?;
    let mut poses = Tensor::zeros(n, 4 * cfg.pose_freqs);
    for (v, cam) in cameras.iter().enumerate() {
        poses.row_mut(v).copy_from_slice(&encode_pose(cam, cfg.pose_freqs)?.0);
    }
    let poses = tape.constant(poses);
    let pose = net.linear(tape, "pose", poses)?;
    x = tape.add_group_rows(x, pose)?;
    let pos = tape.constant(sinusoid_2d(h, w, d));
    x = tape.add_tiled(x, pos)?;
    let ctx = tape.constant(cond.tokens.clone());
    for i in 0..cfg.layers {
        x = net.attention_block(tape, &format!("trunk.{i}.self"), x, None, global)?;
        x = net.attention_block(tape, &format!("trunk.{i}.cross"), x, Some(ctx), global)?;
        x = net.mlp_block(tape, &format!("trunk.{i}.mlp"), x)?;
    }

    let (mut hs, mut ws) = (h, w);
    for st in 0..cfg.upsample_stages() {
        x = net.linear(tape, &format!("up.{st}.expand"), x)?;
        x = tape.pixel_shuffle(x, n, hs, ws, 2)?;
        hs *= 2;
        ws *= 2;
        if hs % cfg.upsample_bands != 0 {
            return Err(Error::Shape(format!(
                "{hs} upsampled rows do not split into {} bands",
                cfg.upsample_bands
            )));
        }
        let layout = AttnLayout {
            heads: cfg.heads,
            groups: n * cfg.upsample_bands,
            shared_kv: false,
        };
        x = net.attention_block(tape, &format!("up.{st}.attn"), x, None, layout)?;
        x = net.mlp_block(tape, &format!("up.{st}.mlp"), x)?;
    }
    let x = net.layernorm(tape, "head.ln", x)?;
    let raw = net.linear(tape, "head", x)?;

    let rays = pixel_rays(cfg, cameras, h, w);
    let (near, far) = (T::lit(cfg.near), T::lit(cfg.far));
    let rv = tape.value(raw);
    let gaussians = rays
        .iter()
        .enumerate()
        .map(|(i, &(o, dir))| head_activate(rv.row(i), o, dir, near, far))
        .collect();
    let bound = cameras
        .iter()
        .map(|c| norm3(&c.center()))
        .fold(T::zero(), T::max)
        + far;
    Ok(DecoderTrace {
        raw,
        rays,
        scene: GaussianScene::new(gaussians, bound),
    })
}

/// Seed for `tape.backward` at `trace.raw` from per-Gaussian gradients.
pub fn raw_gradient<T: Scalar>(
    tape: &Tape<T>,
    cfg: &DecoderConfig,
    trace: &DecoderTrace<T>,
    grads: &[GaussianGrad<T>],
) -> Result<Tensor<T>> {
    let raw = tape.value(trace.raw);
    if grads.len() != raw.rows {
        return Err(Error::Shape(format!("{} gradients for {} Gaussians", grads.len(), raw.rows)));
    }
    let (near, far) = (T::lit(cfg.near), T::lit(cfg.far));
    let mut out = Tensor::zeros(raw.rows, RAW_CHANNELS);
    for (i, g) in grads.iter().enumerate() {
        out.row_mut(i)
            .copy_from_slice(&head_backward(raw.row(i), trace.rays[i].1, near, far, g));
    }
    Ok(out)
}

/// Decodes a latent grid into a Gaussian scene.
pub fn decoder_forward<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &DecoderConfig,
    latents: &LatentGrid<T>,
    cond: &FeatureTokens<T>,
    cameras: &[Camera<T>],
) -> Result<GaussianScene<T>> {
    if latents.views != cfg.views || latents.patch != cfg.patch {
        return Err(Error::Shape(format!(
            "{} views at patch {}, decoder expects {} at patch {}",
            latents.views, latents.patch, cfg.views, cfg.patch
        )));
    }
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_vec(
        latents.views * latents.tokens_per_view(),
        latents.channels,
        latents.data.clone(),
    )?);
    Ok(decoder_forward_tape(&mut tape, params, cfg, z, (latents.height, latents.width), cond, cameras)?.scene)
}
