//! Gaussian primitives and the rotation/covariance math consumed by the
//! rasterizer, the decoder heads and the metrics.

use serde::{Deserialize, Serialize};

use crate::linalg::{matmul3, norm3, transpose3, Mat3};
use crate::scalar::{sigmoid, Real};
use crate::{Error, Result};

/// Lower clamp on activated scale (world units).
pub const MIN_SCALE: f64 = 1e-4;
/// Upper clamp on activated scale (world units).
pub const MAX_SCALE: f64 = 10.0;

/// Quaternions with a smaller norm cannot be normalized reliably.
pub const MIN_QUAT_NORM: f64 = 1e-8;

/// One anisotropic 3D Gaussian.
///
/// Scale lives in log space, opacity in logit space and the rotation is an
/// unnormalized `(w, x, y, z)` quaternion, so unconstrained optimizer steps
/// always map back to a valid primitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D<T> {
    pub mean: [T; 3],
    pub log_scale: [T; 3],
    pub rotation: [T; 4],
    pub opacity_logit: T,
    pub color: [T; 3],
}

impl<T: Real> Gaussian3D<T> {
    /// Isotropic, axis-aligned Gaussian. Handy for tests and procedural scenes.
    pub fn isotropic(mean: [T; 3], sigma: T, opacity_logit: T, color: [T; 3]) -> Self {
        let ls = sigma.ln();
        Self {
            mean,
            log_scale: [ls; 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            opacity_logit,
            color,
        }
    }

    /// `exp(log_scale)` clamped to `[MIN_SCALE, MAX_SCALE]`.
    pub fn scale(&self) -> [T; 3] {
        self.log_scale.map(activate_scale)
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> Result<[T; 4]> {
        normalize_quat(self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }

    /// Checks the type invariants that are not enforced by construction.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidScene("non-finite gaussian parameter".into()));
        }
        normalize_quat(self.rotation)?;
        if self
            .color
            .iter()
            .any(|&c| c < T::zero() || c > T::one())
        {
            return Err(Error::InvalidScene("color outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Gaussian3D<U> {
        let c = crate::scalar::cast::<T, U>;
        Gaussian3D {
            mean: self.mean.map(c),
            log_scale: self.log_scale.map(c),
            rotation: self.rotation.map(c),
            opacity_logit: c(self.opacity_logit),
            color: self.color.map(c),
        }
    }
}

#[inline]
pub fn activate_scale<T: Real>(log_scale: T) -> T {
    log_scale
        .exp()
        .max(T::lit(MIN_SCALE))
        .min(T::lit(MAX_SCALE))
}

/// True when `activate_scale` is on its exponential branch (nonzero slope).
#[inline]
pub fn scale_unclamped<T: Real>(log_scale: T) -> bool {
    let s = log_scale.exp();
    s > T::lit(MIN_SCALE) && s < T::lit(MAX_SCALE)
}

/// Ordered collection of Gaussians with a bounding radius around the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
    pub bound_radius: T,
}

impl<T: Real> GaussianScene<T> {
    pub fn new(gaussians: Vec<Gaussian3D<T>>, bound_radius: T) -> Self {
        Self {
            gaussians,
            bound_radius,
        }
    }

    /// Builds a scene whose bound is the tightest sphere around the origin.
    pub fn fitted(gaussians: Vec<Gaussian3D<T>>) -> Self {
        let bound_radius = gaussians
            .iter()
            .map(|g| norm3(&g.mean))
            .fold(T::zero(), T::max);
        Self {
            gaussians,
            bound_radius,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::InvalidScene(format!("gaussian {i}: {e}")))?;
            if norm3(&g.mean) > self.bound_radius * T::lit(1.0 + 1e-9) {
                return Err(Error::InvalidScene(format!(
                    "gaussian {i} lies outside bound radius {}",
                    self.bound_radius
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianScene<U> {
        GaussianScene {
            gaussians: self.gaussians.iter().map(Gaussian3D::cast).collect(),
            bound_radius: crate::scalar::cast(self.bound_radius),
        }
    }
}

pub fn normalize_quat<T: Real>(q: [T; 4]) -> Result<[T; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > T::lit(MIN_QUAT_NORM)) {
        return Err(Error::InvalidParameter(format!(
            "quaternion norm {n} too small to normalize"
        )));
    }
    Ok(q.map(|v| v / n))
}

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
#[inline]
pub fn unit_quat_to_rotmat<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Rotation matrix of a raw quaternion (normalized first).
pub fn quat_to_rotmat<T: Real>(q: [T; 4]) -> Result<Mat3<T>> {
    Ok(unit_quat_to_rotmat(normalize_quat(q)?))
}

/// Pulls a gradient on the rotation matrix back to the raw quaternion.
pub fn rotmat_grad_to_quat<T: Real>(raw: [T; 4], d_r: &Mat3<T>) -> [T; 4] {
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]).sqrt();
    let [w, x, y, z] = raw.map(|v| v / n);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let g = d_r;
    let dw = two
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * (x * g[1][1] + x * g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * (y * g[0][0] + y * g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * (z * g[0][0] + z * g[1][1]);
    let dn = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let proj = qn[0] * dn[0] + qn[1] * dn[1] + qn[2] * dn[2] + qn[3] * dn[3];
    [0, 1, 2, 3].map(|i| (dn[i] - qn[i] * proj) / n)
}

/// World-space covariance `R·S·Sᵀ·Rᵀ` with `S = diag(activated scale)`.
pub fn covariance_from<T: Real>(g: &Gaussian3D<T>) -> Result<Mat3<T>> {
    let r = quat_to_rotmat(g.rotation)?;
    let s = g.scale();
    let mut m = r;
    for row in m.iter_mut() {
        for j in 0..3 {
            row[j] *= s[j];
        }
    }
    Ok(matmul3(&m, &transpose3(&m)))
}
