//! Frozen conditioning features and sinusoidal encodings.

use gsd_core::codec::encode_views;
use gsd_core::image::ImageBuffer;
use gsd_core::{Error, Result};
use gsd_netkit::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Features of the conditioning image.
    Conditioning,
    /// Hidden states of a transformer trunk.
    Trunk,
}

/// `M×D` feature tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTokens<T> {
    pub tokens: Tensor<T>,
    pub kind: FeatureKind,
}

impl<T: Scalar> FeatureTokens<T> {
    pub fn len(&self) -> usize {
        self.tokens.rows
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub patch: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            dim: 64,
            seed: 0x00c0_ffee,
        }
    }
}

/// Frozen patch embedder: a seeded random projection of non-overlapping
/// patches plus a 2D sinusoidal position code.
#[derive(Clone, Debug)]
pub struct ConditionEncoder<T> {
    pub cfg: ConditionConfig,
    proj: Tensor<T>,
}

impl<T: Scalar> ConditionEncoder<T> {
    pub fn new(cfg: ConditionConfig) -> Result<Self> {
        if cfg.patch == 0 || cfg.dim == 0 || cfg.dim % 4 != 0 {
            return Err(Error::InvalidParameter(format!(
                "condition encoder needs patch >= 1 and dim divisible by 4, got {cfg:?}"
            )));
        }
        let fan_in = 3 * cfg.patch * cfg.patch;
        let std = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let data = (0..fan_in * cfg.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z * std)
            })
            .collect();
        Ok(Self {
            cfg,
            proj: Tensor::from_vec(fan_in, cfg.dim, data)?,
        })
    }

    /// Number of tokens produced for an `h×w` image.
    pub fn token_count(&self, height: usize, width: usize) -> usize {
        (height / self.cfg.patch) * (width / self.cfg.patch)
    }

    pub fn extract(&self, image: &ImageBuffer<T>) -> Result<FeatureTokens<T>> {
        let p = self.cfg.patch;
        let grid = encode_views::<T, T>(std::slice::from_ref(image), p)?;
        let patches = Tensor::from_vec(grid.tokens_per_view(), grid.channels, grid.data)?;
        let mut tokens = patches.matmul(&self.proj)?;
        tokens.add_assign(&sinusoid_2d(grid.height, grid.width, self.cfg.dim));
        Ok(FeatureTokens {
            tokens,
            kind: FeatureKind::Conditioning,
        })
    }
}

/// Features of `image` under the encoder built from `cfg`.
pub fn extract_condition_features<T: Scalar>(image: &ImageBuffer<T>, cfg: ConditionConfig) -> Result<FeatureTokens<T>> {
    ConditionEncoder::new(cfg)?.extract(image)
}

fn push_sincos<T: Scalar>(out: &mut [T], pos: f64, pairs: usize) {
    for i in 0..pairs {
        let freq = 10000f64.powf(-(i as f64) / pairs as f64);
        out[2 * i] = T::lit((pos * freq).sin());
        out[2 * i + 1] = T::lit((pos * freq).cos());
    }
}

/// `(h·w)×d` table: the first half of each row encodes the row index, the
/// second half the column index. `d` must be divisible by 4.
pub fn sinusoid_2d<T: Scalar>(h: usize, w: usize, d: usize) -> Tensor<T> {
    assert!(d % 4 == 0, "2D sinusoid width must be divisible by 4");
    let mut t = Tensor::zeros(h * w, d);
    for y in 0..h {
        for x in 0..w {
            let row = t.row_mut(y * w + x);
            push_sincos(&mut row[..d / 2], y as f64, d / 4);
            push_sincos(&mut row[d / 2..], x as f64, d / 4);
        }
    }
    t
}

/// `1×d` sinusoidal embedding of a scalar position (`d` even).
pub fn sinusoid_1d<T: Scalar>(pos: f64, d: usize) -> Tensor<T> {
    assert!(d % 2 == 0, "sinusoid width must be even");
    let mut t = Tensor::zeros(1, d);
    push_sincos(&mut t.data, pos, d / 2);
    t
}
