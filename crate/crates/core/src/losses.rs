//! Reconstruction and distillation objectives with their gradients.
//!
//! Image and latent terms are full means over every entry, so magnitudes do
//! not depend on resolution or batch size. Depth is compared only where the
//! ground truth is covered by the object.

use serde::{Deserialize, Serialize};

use crate::codec::LatentGrid;
use crate::image::{DepthBuffer, ImageBuffer};
use crate::{Error, Real, Result};

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_depth: f64,
    pub lambda_3d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_depth: 0.2,
            lambda_3d: 1.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_depth", self.lambda_depth), ("lambda_3d", self.lambda_3d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn check_images<T: Real>(a: &[ImageBuffer<T>], b: &[ImageBuffer<T>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} outputs vs {} targets", a.len(), b.len())));
    }
    let mut n = 0;
    for (x, y) in a.iter().zip(b) {
        if !x.same_shape(y) {
            return Err(Error::Shape(format!(
                "image {}x{} vs {}x{}",
                x.height, x.width, y.height, y.width
            )));
        }
        n += x.pixels.len();
    }
    Ok(n)
}

/// Mean squared error over every image, pixel and channel.
pub fn rgb_loss<T: Real>(outputs: &[ImageBuffer<T>], targets: &[ImageBuffer<T>]) -> Result<T> {
    Ok(rgb_loss_grad(outputs, targets)?.0)
}

/// [`rgb_loss`] and its gradient with respect to each output's pixels.
pub fn rgb_loss_grad<T: Real>(
    outputs: &[ImageBuffer<T>],
    targets: &[ImageBuffer<T>],
) -> Result<(T, Vec<Vec<T>>)> {
    let n = check_images(outputs, targets)?;
    if n == 0 {
        return Ok((T::zero(), outputs.iter().map(|_| Vec::new()).collect()));
    }
    let inv = T::one() / T::from_usize_lossy(n);
    let mut total = T::zero();
    let grads = outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| {
            o.pixels
                .iter()
                .zip(&t.pixels)
                .map(|(&a, &b)| {
                    let d = a - b;
                    total += d * d;
                    T::lit(2.0) * d * inv
                })
                .collect()
        })
        .collect();
    Ok((total * inv, grads))
}

/// Masked mean squared depth difference; zero when no pixel is masked.
pub fn depth_loss<T: Real>(
    outputs: &[DepthBuffer<T>],
    targets: &[DepthBuffer<T>],
    masks: &[Vec<bool>],
) -> Result<T> {
    Ok(depth_loss_grad(outputs, targets, masks)?.0)
}

/// [`depth_loss`] and its gradient with respect to each output depth map.
pub fn depth_loss_grad<T: Real>(
    outputs: &[DepthBuffer<T>],
    targets: &[DepthBuffer<T>],
    masks: &[Vec<bool>],
) -> Result<(T, Vec<Vec<T>>)> {
    if outputs.len() != targets.len() || outputs.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} outputs, {} targets, {} masks",
            outputs.len(),
            targets.len(),
            masks.len()
        )));
    }
    let mut count = 0usize;
    for ((o, t), m) in outputs.iter().zip(targets).zip(masks) {
        if !o.same_shape(t) || m.len() != o.depth.len() {
            return Err(Error::Shape(format!(
                "depth {}x{} vs {}x{} with mask of {}",
                o.height,
                o.width,
                t.height,
                t.width,
                m.len()
            )));
        }
        count += m.iter().filter(|&&b| b).count();
    }
    let zeros = || outputs.iter().map(|o| vec![T::zero(); o.depth.len()]).collect();
    if count == 0 {
        return Ok((T::zero(), zeros()));
    }
    let inv = T::one() / T::from_usize_lossy(count);
    let mut total = T::zero();
    let mut grads: Vec<Vec<T>> = zeros();
    for (((o, t), m), g) in outputs.iter().zip(targets).zip(masks).zip(&mut grads) {
        for i in 0..m.len() {
            if m[i] {
                let d = o.depth[i] - t.depth[i];
                total += d * d;
                g[i] = T::lit(2.0) * d * inv;
            }
        }
    }
    Ok((total * inv, grads))
}

/// Reconstruction objective: `rgb + λ_depth · depth`.
pub fn loss_3d<T: Real>(rgb_term: T, depth_term: T, cfg: &LossConfig) -> T {
    rgb_term + T::lit(cfg.lambda_depth) * depth_term
}

/// Mean squared error between predicted and target latents.
pub fn loss_2d<T: Real>(pred: &LatentGrid<T>, target: &LatentGrid<T>) -> Result<T> {
    Ok(loss_2d_grad(pred, target)?.0)
}

/// [`loss_2d`] and its gradient with respect to `pred`.
pub fn loss_2d_grad<T: Real>(pred: &LatentGrid<T>, target: &LatentGrid<T>) -> Result<(T, Vec<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "latents {}x{}x{}x{} vs {}x{}x{}x{}",
            pred.views,
            pred.height,
            pred.width,
            pred.channels,
            target.views,
            target.height,
            target.width,
            target.channels
        )));
    }
    if pred.data.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let inv = T::one() / T::from_usize_lossy(pred.data.len());
    let mut total = T::zero();
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| {
            let d = a - b;
            total += d * d;
            T::lit(2.0) * d * inv
        })
        .collect();
    Ok((total * inv, grad))
}

/// Distillation objective: `l2d + λ_3d · l3d`.
pub fn loss_distill<T: Real>(l2d: T, l3d: T, cfg: &LossConfig) -> T {
    l2d + T::lit(cfg.lambda_3d) * l3d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(px: Vec<f64>) -> ImageBuffer<f64> {
        ImageBuffer::from_pixels(2, 2, px).unwrap()
    }

    fn depth(d: Vec<f64>) -> DepthBuffer<f64> {
        let mut b = DepthBuffer::zeros(2, 2);
        b.depth = d;
        b
    }

    #[test]
    fn rgb_examples() {
        let a = img(vec![0.25; 12]);
        assert_eq!(rgb_loss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        let mut b = a.clone();
        b.pixels[5] += 1.0;
        assert!((rgb_loss(&[a.clone()], &[b.clone()]).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(
            rgb_loss(&[a.clone()], &[b.clone()]).unwrap(),
            rgb_loss(&[b], &[a.clone()]).unwrap()
        );
        let small = ImageBuffer::filled(1, 1, [0.0; 3]);
        assert!(matches!(rgb_loss(&[a], &[small]), Err(Error::Shape(_))));
    }

    #[test]
    fn depth_examples() {
        let t = depth(vec![1.0, 2.0, 3.0, 4.0]);
        let all = vec![vec![true; 4]];
        assert_eq!(depth_loss(&[t.clone()], &[t.clone()], &all).unwrap(), 0.0);
        let o = depth(vec![1.5, 2.0, 3.0, 4.0]);
        assert!((depth_loss(&[o.clone()], &[t.clone()], &all).unwrap() - 0.0625).abs() < 1e-15);
        assert_eq!(depth_loss(&[o], &[t], &[vec![false; 4]]).unwrap(), 0.0);
    }

    #[test]
    fn masked_pixels_carry_no_gradient() {
        let o = depth(vec![1.0, 9.0, 3.0, 9.0]);
        let t = depth(vec![0.0; 4]);
        let (_, g) = depth_loss_grad(&[o], &[t], &[vec![true, false, true, false]]).unwrap();
        assert_eq!(g[0], vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn composition_weights() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.lambda_depth, cfg.lambda_3d), (0.2, 1.5));
        assert!((loss_3d(1.0, 1.0, &cfg) - 1.2f64).abs() <= 1e-12);
        assert_eq!(loss_3d(0.0f64, 0.0, &cfg), 0.0);
        assert!((loss_3d(0.0, 0.7, &cfg) - 0.2f64 * 0.7).abs() <= 1e-12);
        assert!((loss_distill(1.0, 1.0, &cfg) - 2.5f64).abs() <= 1e-12);
        assert_eq!(loss_distill(0.3f64, 0.0, &cfg), 0.3);
        assert!((loss_distill(0.0, 0.4, &cfg) - 1.5f64 * 0.4).abs() <= 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossConfig { lambda_depth: -0.1, lambda_3d: 1.0 }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn latent_constant_offset() {
        let z = LatentGrid::<f64>::zeros(2, 2, 2, 1).unwrap();
        let off = z.with_data(vec![0.3; z.data.len()]).unwrap();
        assert!((loss_2d(&off, &z).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(loss_2d(&z, &z).unwrap(), 0.0);
        let other = LatentGrid::<f64>::zeros(1, 2, 2, 1).unwrap();
        assert!(loss_2d(&z, &other).is_err());
    }

    proptest! {
        #[test]
        fn rgb_gradient_matches_difference_quotient(
            a in prop::collection::vec(0.0f64..1.0, 12),
            b in prop::collection::vec(0.0f64..1.0, 12),
            k in 0usize..12,
        ) {
            let (l, g) = rgb_loss_grad(&[img(a.clone())], &[img(b.clone())]).unwrap();
            prop_assert!(l >= 0.0);
            let h = 1e-6;
            let mut ap = a.clone();
            ap[k] += h;
            let mut am = a;
            am[k] -= h;
            let fd = (rgb_loss(&[img(ap)], &[img(b.clone())]).unwrap()
                - rgb_loss(&[img(am)], &[img(b)]).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[0][k]).abs() < 1e-8);
        }

        #[test]
        fn latent_loss_nonnegative(v in prop::collection::vec(-3.0f64..3.0, 12)) {
            let z = LatentGrid::<f64>::zeros(1, 2, 2, 1).unwrap();
            prop_assert!(loss_2d(&z.with_data(v).unwrap(), &z).unwrap() >= 0.0);
        }
    }
}
