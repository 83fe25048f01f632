//! Orbit cameras, regular view selection and sinusoidal pose encoding.
//!
//! Camera frame convention: `x` right, `y` down, `z` forward. The world up
//! axis is `+z` and elevation is measured from the `xy` plane.

use serde::{Deserialize, Serialize};

use crate::linalg::{cross3, matvec3, matvec3_t, normalize3, scale3, Mat3, Vec3};
use crate::{Error, Real, Result};

/// Default vertical field of view in degrees.
pub const DEFAULT_FOV_DEG: f64 = 45.0;

/// Pinhole camera with principal point at the image center.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub focal: T,
    pub width: usize,
    pub height: usize,
    pub azimuth: T,
    pub elevation: T,
    pub radius: T,
}

/// Serializable description from which a `Camera` is rebuilt exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn build<T: Real>(&self) -> Result<Camera<T>> {
        Camera::orbit(
            T::lit(self.azimuth),
            T::lit(self.elevation),
            T::lit(self.radius),
            T::lit(self.focal),
            self.width,
            self.height,
        )
    }
}

/// Focal length in pixels for a vertical field of view.
pub fn focal_from_fov(fov_deg: f64, height: usize) -> f64 {
    0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan()
}

impl<T: Real> Camera<T> {
    /// Camera on a sphere of `radius` looking at the origin.
    pub fn orbit(
        azimuth: T,
        elevation: T,
        radius: T,
        focal: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidParameter(format!("radius {radius} must be > 0")));
        }
        if !(focal > T::zero()) {
            return Err(Error::InvalidParameter(format!("focal {focal} must be > 0")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("empty image resolution".into()));
        }
        if elevation.cos() < T::lit(1e-6) {
            return Err(Error::InvalidParameter(
                "elevation too close to the poles for a +z up axis".into(),
            ));
        }
        let center = [
            radius * elevation.cos() * azimuth.cos(),
            radius * elevation.cos() * azimuth.sin(),
            radius * elevation.sin(),
        ];
        let up = [T::zero(), T::zero(), T::one()];
        let forward = normalize3(&scale3(&center, -T::one()));
        let right = normalize3(&cross3(&forward, &up));
        let down = cross3(&forward, &right);
        let rotation = [right, down, forward];
        let rc = matvec3(&rotation, &center);
        Ok(Self {
            rotation,
            translation: scale3(&rc, -T::one()),
            focal,
            width,
            height,
            azimuth,
            elevation,
            radius,
        })
    }

    pub fn spec(&self) -> CameraSpec {
        CameraSpec {
            azimuth: self.azimuth.as_f64(),
            elevation: self.elevation.as_f64(),
            radius: self.radius.as_f64(),
            focal: self.focal.as_f64(),
            width: self.width,
            height: self.height,
        }
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3<T> {
        scale3(&matvec3_t(&self.rotation, &self.translation), -T::one())
    }

    pub fn principal_point(&self) -> [T; 2] {
        [
            T::from_usize_lossy(self.width) * T::lit(0.5),
            T::from_usize_lossy(self.height) * T::lit(0.5),
        ]
    }

    pub fn world_to_camera(&self, p: &Vec3<T>) -> Vec3<T> {
        let r = matvec3(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Vec3<T>) -> Option<[T; 2]> {
        let c = self.world_to_camera(p);
        if c[2] <= T::zero() {
            return None;
        }
        let [cx, cy] = self.principal_point();
        Some([
            self.focal * c[0] / c[2] + cx,
            self.focal * c[1] / c[2] + cy,
        ])
    }

    /// World-space ray `(origin, unit direction)` through pixel coordinates
    /// `(u, v)` (pixel centers sit at half-integers).
    pub fn pixel_ray(&self, u: T, v: T) -> (Vec3<T>, Vec3<T>) {
        let [cx, cy] = self.principal_point();
        let d_cam = normalize3(&[(u - cx) / self.focal, (v - cy) / self.focal, T::one()]);
        (self.center(), matvec3_t(&self.rotation, &d_cam))
    }
}

/// `count` cameras evenly spaced in azimuth at a fixed elevation.
pub fn make_orbit_cameras<T: Real>(
    count: usize,
    elevation: T,
    radius: T,
    focal: T,
    width: usize,
    height: usize,
) -> Result<Vec<Camera<T>>> {
    if count == 0 {
        return Err(Error::InvalidParameter("camera count must be >= 1".into()));
    }
    (0..count)
        .map(|i| {
            let az = T::lit(2.0) * T::PI() * T::from_usize_lossy(i) / T::from_usize_lossy(count);
            Camera::orbit(az, elevation, radius, focal, width, height)
        })
        .collect()
}

/// Regularly spaced subset `floor(i·total/n)` for `i in 0..n`.
pub fn select_input_views(total: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::InvalidParameter(format!(
            "cannot select {n} views out of {total}"
        )));
    }
    Ok((0..n).map(|i| i * total / n).collect())
}

/// Sinusoidal encoding of a camera's azimuth and elevation.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEncoding<T>(pub Vec<T>);

impl<T> PoseEncoding<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// For each of azimuth then elevation: `sin(2^k a), cos(2^k a)` for `k < freqs`.
pub fn encode_pose<T: Real>(cam: &Camera<T>, freqs: usize) -> Result<PoseEncoding<T>> {
    if freqs == 0 {
        return Err(Error::InvalidParameter("pose encoding needs >= 1 frequency".into()));
    }
    let mut out = Vec::with_capacity(4 * freqs);
    for angle in [cam.azimuth, cam.elevation] {
        let mut f = T::one();
        for _ in 0..freqs {
            let a = angle * f;
            out.push(a.sin());
            out.push(a.cos());
            f = f * T::lit(2.0);
        }
    }
    Ok(PoseEncoding(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{det3, matmul3, norm3, sub3, transpose3};
    use std::f64::consts::PI;

    fn cams(count: usize, el: f64) -> Vec<Camera<f64>> {
        make_orbit_cameras(count, el, 3.0, focal_from_fov(45.0, 64), 64, 64).unwrap()
    }

    #[test]
    fn four_cameras_quarter_turns() {
        let c = cams(4, 0.2);
        let az: Vec<f64> = c.iter().map(|c| c.azimuth.to_degrees()).collect();
        for (a, e) in az.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(make_orbit_cameras::<f64>(0, 0.0, 1.0, 10.0, 8, 8).is_err());
    }

    #[test]
    fn look_at_target_on_forward_axis() {
        for c in cams(7, 0.4) {
            let v = c.world_to_camera(&[0.0; 3]);
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12 && v[2] > 0.0);
            let rtr = matmul3(&transpose3(&c.rotation), &c.rotation);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((rtr[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            assert!((det3(&c.rotation) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eighty_four_view_protocol_geometry() {
        let c = cams(84, 10f64.to_radians());
        assert_eq!(c.len(), 84);
        for cam in &c {
            assert!((norm3(&cam.center()) - 3.0).abs() < 1e-12);
        }
        let mut max_gap: f64 = 0.0;
        for i in 0..84 {
            let a = c[i].azimuth;
            let b = if i + 1 < 84 { c[i + 1].azimuth } else { c[0].azimuth + 2.0 * PI };
            max_gap = max_gap.max(b - a);
        }
        assert!((max_gap.to_degrees() - 360.0 / 84.0).abs() < 1e-9);
    }

    #[test]
    fn origin_projects_to_image_center() {
        for cam in cams(13, -0.05) {
            let p = cam.project(&[0.0; 3]).unwrap();
            assert!((p[0] - 32.0).abs() < 1e-12 && (p[1] - 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn up_axis_points_up_in_image() {
        let cam = &cams(1, 0.0)[0];
        let top = cam.project(&[0.0, 0.0, 0.5]).unwrap();
        assert!(top[1] < 32.0);
    }

    #[test]
    fn pixel_ray_passes_through_projection() {
        let cam = &cams(5, 0.3)[2];
        let p = [0.2, -0.1, 0.3];
        let uv = cam.project(&p).unwrap();
        let (o, d) = cam.pixel_ray(uv[0], uv[1]);
        let v = sub3(&p, &o);
        let c = crate::linalg::cross3(&v, &d);
        assert!(norm3(&c) < 1e-12);
    }

    #[test]
    fn view_selection() {
        assert_eq!(select_input_views(8, 4).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(
            select_input_views(84, 16).unwrap(),
            vec![0, 5, 10, 15, 21, 26, 31, 36, 42, 47, 52, 57, 63, 68, 73, 78]
        );
        assert_eq!(select_input_views(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(select_input_views(4, 5).is_err());
        assert!(select_input_views(4, 0).is_err());
    }

    #[test]
    fn pose_encoding_values() {
        let cam = Camera::orbit(0.0, 0.0, 2.0, 10.0, 8, 8).unwrap();
        let e = encode_pose(&cam, 2).unwrap();
        assert_eq!(e.len(), 8);
        for (i, v) in e.0.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let cam = Camera::orbit(PI, 0.0, 2.0, 10.0, 8, 8).unwrap();
        let e = encode_pose(&cam, 1).unwrap();
        assert!(e.0[0].abs() < 1e-15 && (e.0[1] + 1.0).abs() < 1e-15);
        assert!(encode_pose(&cam, 0).is_err());
    }

    #[test]
    fn pose_encoding_is_periodic_and_bounded() {
        for i in 0..20 {
            let az = -3.0 + 0.37 * i as f64;
            let a = Camera::orbit(az, 0.3, 2.0, 10.0, 8, 8).unwrap();
            let b = Camera::orbit(az + 2.0 * PI, 0.3, 2.0, 10.0, 8, 8).unwrap();
            let (ea, eb) = (encode_pose(&a, 6).unwrap(), encode_pose(&b, 6).unwrap());
            for (x, y) in ea.0.iter().zip(&eb.0) {
                assert!((x - y).abs() < 1e-12);
                assert!(x.abs() <= 1.0);
            }
        }
    }
}
