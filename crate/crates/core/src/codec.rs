//! Lossless latent codec: per-view space-to-depth followed by `x → 2x − 1`.
//!
//! A `p×p` patch of RGB pixels becomes one latent cell with `3·p²` channels,
//! ordered `(dy·p + dx)·3 + ch`. The image and latent scalar types are
//! independent and the affine map is evaluated in `f64`. When one side is
//! wider than the other (for instance `f32` images in `f64` latents) the
//! round trip is exact for every input; with both sides in the same
//! precision the map rounds low-order bits of values close to zero.

use crate::image::ImageBuffer;
use crate::scalar::cast;
use crate::{Error, Real, Result};

/// Multi-view latent grid, stored view-major then row, column, channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid<T> {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    pub data: Vec<T>,
}

impl<T: Real> LatentGrid<T> {
    pub fn zeros(views: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::InvalidParameter("patch size must be >= 1".into()));
        }
        let channels = 3 * patch * patch;
        Ok(Self {
            views,
            height,
            width,
            channels,
            patch,
            data: vec![T::zero(); views * height * width * channels],
        })
    }

    /// Grid with the same geometry and new data.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "latent data has {} entries, expected {}",
                data.len(),
                self.data.len()
            )));
        }
        Ok(Self { data, ..self.clone() })
    }

    /// Cells per view.
    pub fn tokens_per_view(&self) -> usize {
        self.height * self.width
    }

    pub fn view_len(&self) -> usize {
        self.tokens_per_view() * self.channels
    }

    /// Row-major `tokens × channels` block of one view.
    pub fn view(&self, v: usize) -> &[T] {
        let n = self.view_len();
        &self.data[v * n..(v + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.views == other.views
            && self.height == other.height
            && self.width == other.width
            && self.patch == other.patch
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> LatentGrid<U> {
        LatentGrid {
            views: self.views,
            height: self.height,
            width: self.width,
            channels: self.channels,
            patch: self.patch,
            data: self.data.iter().map(|&v| cast(v)).collect(),
        }
    }
}

/// Encode equally sized images into a latent grid with patch size `p`.
pub fn encode_views<I: Real, L: Real>(images: &[ImageBuffer<I>], p: usize) -> Result<LatentGrid<L>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to encode".into()))?;
    if p == 0 {
        return Err(Error::InvalidParameter("patch size must be >= 1".into()));
    }
    let (h, w) = (first.height, first.width);
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} image is not divisible by patch {p}")));
    }
    if let Some(bad) = images.iter().find(|im| !im.same_shape(first)) {
        return Err(Error::Shape(format!(
            "mixed resolutions {h}x{w} and {}x{}",
            bad.height, bad.width
        )));
    }
    let mut grid = LatentGrid::zeros(images.len(), h / p, w / p, p)?;
    let (gh, gw, c) = (grid.height, grid.width, grid.channels);
    for (v, im) in images.iter().enumerate() {
        for gy in 0..gh {
            for gx in 0..gw {
                let cell = ((v * gh + gy) * gw + gx) * c;
                for dy in 0..p {
                    for dx in 0..p {
                        for ch in 0..3 {
                            let x = im.get(gy * p + dy, gx * p + dx, ch).as_f64();
                            grid.data[cell + (dy * p + dx) * 3 + ch] = L::lit(2.0 * x - 1.0);
                        }
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Invert [`encode_views`], clamping pixels to `[0, 1]`.
pub fn decode_latents<L: Real, I: Real>(z: &LatentGrid<L>) -> Vec<ImageBuffer<I>> {
    let p = z.patch;
    let (gh, gw, c) = (z.height, z.width, z.channels);
    (0..z.views)
        .map(|v| {
            let mut im = ImageBuffer::filled(gh * p, gw * p, [I::zero(); 3]);
            for gy in 0..gh {
                for gx in 0..gw {
                    let cell = ((v * gh + gy) * gw + gx) * c;
                    for dy in 0..p {
                        for dx in 0..p {
                            for ch in 0..3 {
                                let zv = z.data[cell + (dy * p + dx) * 3 + ch].as_f64();
                                let x = ((zv + 1.0) * 0.5).clamp(0.0, 1.0);
                                im.set(gy * p + dy, gx * p + dx, ch, I::lit(x));
                            }
                        }
                    }
                }
            }
            im
        })
        .collect()
}
