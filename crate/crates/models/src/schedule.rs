//! Cosine noise schedule, forward noising and the deterministic re-noising
//! step used by the sampler.

use gsd_core::codec::LatentGrid;
use gsd_core::{Error, Real, Result};
use serde::{Deserialize, Serialize};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Lower clip of `alpha_bar`.
pub const ALPHA_BAR_MIN: f64 = 1e-4;
pub const DEFAULT_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    /// `steps + 1` entries, `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
}

/// Cosine `alpha_bar` clipped to `[1e-4, 1]`.
///
/// For long schedules several trailing entries of the closed form fall
/// below the clip; those are replaced by a geometric decay from the last
/// unclipped entry down to the floor, which keeps the sequence strictly
/// decreasing.
pub fn make_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
    }
    let s = COSINE_OFFSET;
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let raw: Vec<f64> = (0..=steps).map(|t| f(t) / f0).collect();
    let mut alpha_bar: Vec<f64> = raw.iter().map(|&a| a.clamp(ALPHA_BAR_MIN, 1.0)).collect();
    let first_clipped = raw.iter().position(|&a| a <= ALPHA_BAR_MIN).unwrap_or(steps);
    if first_clipped < steps {
        let start = first_clipped - 1;
        let ratio = (ALPHA_BAR_MIN / raw[start]).powf(1.0 / (steps - start) as f64);
        for t in first_clipped..steps {
            alpha_bar[t] = raw[start] * ratio.powi((t - start) as i32);
        }
        alpha_bar[steps] = ALPHA_BAR_MIN;
    }
    alpha_bar[0] = 1.0;
    Ok(NoiseSchedule { steps, alpha_bar })
}

impl NoiseSchedule {
    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::InvalidParameter(format!("timestep {t} outside 0..={}", self.steps)));
        }
        Ok(())
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        let a = self.alpha_bar[t];
        (a.sqrt(), (1.0 - a).sqrt())
    }

    /// Strictly decreasing timesteps `T = τ_S > … > τ_0 = 0` for an
    /// `steps`-step sampler (at most `T` steps).
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 {
            return Err(Error::InvalidParameter("sampler needs at least one step".into()));
        }
        let s = steps.min(self.steps);
        Ok((0..=s).rev().map(|i| (i * self.steps + s / 2) / s).collect())
    }
}

/// `z_t = √ᾱ_t·z + √(1−ᾱ_t)·ε`.
pub fn add_noise<T: Real>(
    schedule: &NoiseSchedule,
    z: &LatentGrid<T>,
    t: usize,
    eps: &LatentGrid<T>,
) -> Result<LatentGrid<T>> {
    schedule.check_t(t)?;
    if !z.same_shape(eps) {
        return Err(Error::Shape("noise grid does not match the latent grid".into()));
    }
    let (a, b) = schedule.coefficients(t);
    let (a, b) = (T::lit(a), T::lit(b));
    z.with_data(z.data.iter().zip(&eps.data).map(|(&x, &e)| a * x + b * e).collect())
}

/// Noise implied by a noisy sample and a clean prediction at step `t > 0`.
pub fn implied_noise<T: Real>(schedule: &NoiseSchedule, z_t: &[T], x0: &[T], t: usize) -> Vec<T> {
    let (a, b) = schedule.coefficients(t);
    let (a, b) = (T::lit(a), T::lit(b));
    z_t.iter().zip(x0).map(|(&z, &x)| (z - a * x) / b).collect()
}

/// Deterministic move from step `t` to `t_prev < t` given a clean prediction.
pub fn renoise<T: Real>(schedule: &NoiseSchedule, z_t: &[T], x0: &[T], t: usize, t_prev: usize) -> Vec<T> {
    let eps = implied_noise(schedule, z_t, x0, t);
    let (a, b) = schedule.coefficients(t_prev);
    let (a, b) = (T::lit(a), T::lit(b));
    x0.iter().zip(&eps).map(|(&x, &e)| a * x + b * e).collect()
}
