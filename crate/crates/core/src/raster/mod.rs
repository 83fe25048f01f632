//! Differentiable Gaussian splat rasterization.
//!
//! Gaussians are projected with the first-order (EWA) perspective
//! approximation, depth sorted, and alpha composited front to back. The
//! tiled [`render`] is the production path; [`render_reference`] evaluates the
//! same compositing for every pixel against every splat and serves as its
//! oracle. [`render_backward`] is the analytic reverse of [`render`].

mod backward;

pub use backward::{render_backward, GaussianGrad};

use rayon::prelude::*;

use crate::camera::Camera;
use crate::gaussian::{covariance_from, Gaussian3D, GaussianScene};
use crate::image::{DepthBuffer, ImageBuffer};
use crate::linalg::{matmul3, transpose3, Mat3};
use crate::{Error, Real, Result};

/// Numerical knobs of the compositor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings<T> {
    /// Per-splat alpha is clamped to this value.
    pub alpha_max: T,
    /// A pixel stops compositing once its transmittance drops below this.
    pub transmittance_min: T,
    /// Splats whose camera depth is at or below this are culled.
    pub near: T,
    /// Isotropic screen-space dilation added to every 2D covariance (px²).
    pub dilation: T,
    /// Tile edge in pixels.
    pub tile_size: usize,
    /// Support of a splat ends where `opacity · gaussian` falls below this.
    pub alpha_floor: T,
}

impl<T: Real> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            alpha_max: T::lit(0.999),
            transmittance_min: T::lit(1e-6),
            near: T::lit(0.01),
            dilation: T::lit(0.3),
            tile_size: 16,
            alpha_floor: T::lit(1e-10),
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<T> {
    pub mean2d: [T; 2],
    /// `(xx, xy, yy)` of the dilated 2D covariance.
    pub cov2d: [T; 3],
    /// `(xx, xy, yy)` of the inverse covariance.
    pub conic: [T; 3],
    pub camera_depth: T,
    pub color: [T; 3],
    pub opacity: T,
    pub source_index: usize,
    /// Radius (px) beyond which `opacity · gaussian < alpha_floor`.
    pub radius: T,
    /// Exponent below which `opacity · gaussian < alpha_floor`.
    pub min_power: T,
}

/// Intermediates of the projection reused by the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Projection<T> {
    pub cam_point: [T; 3],
    pub jacobian: [[T; 3]; 2],
    /// Covariance rotated into the camera frame, `W Σ Wᵀ`.
    pub cam_cov: Mat3<T>,
}

pub(crate) fn project_full<T: Real>(
    g: &Gaussian3D<T>,
    index: usize,
    cam: &Camera<T>,
    settings: &RenderSettings<T>,
) -> Result<Option<(Splat2D<T>, Projection<T>)>> {
    let p = cam.world_to_camera(&g.mean);
    let z = p[2];
    if z <= settings.near {
        return Ok(None);
    }
    let f = cam.focal;
    let [cx, cy] = cam.principal_point();
    let inv_z = T::one() / z;
    let mean2d = [f * p[0] * inv_z + cx, f * p[1] * inv_z + cy];
    let j = [
        [f * inv_z, T::zero(), -f * p[0] * inv_z * inv_z],
        [T::zero(), f * inv_z, -f * p[1] * inv_z * inv_z],
    ];
    let sigma = covariance_from(g)?;
    let w = &cam.rotation;
    let v = matmul3(&matmul3(w, &sigma), &transpose3(w));
    // cov2d = J V Jᵀ
    let mut jv = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jv[r][c] = j[r][0] * v[0][c] + j[r][1] * v[1][c] + j[r][2] * v[2][c];
        }
    }
    let entry = |r: usize, c: usize| jv[r][0] * j[c][0] + jv[r][1] * j[c][1] + jv[r][2] * j[c][2];
    let cov2d = [
        entry(0, 0) + settings.dilation,
        entry(0, 1),
        entry(1, 1) + settings.dilation,
    ];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > T::zero()) {
        return Err(Error::InvalidScene(format!(
            "gaussian {index} projects to a degenerate covariance"
        )));
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let opacity = g.opacity();
    let mid = T::lit(0.5) * (cov2d[0] + cov2d[2]);
    let half_diff = T::lit(0.5) * (cov2d[0] - cov2d[2]);
    let lambda_max = mid + (half_diff * half_diff + cov2d[1] * cov2d[1]).sqrt();
    let (radius, min_power) = if opacity > settings.alpha_floor {
        let log_ratio = (opacity / settings.alpha_floor).ln();
        ((T::lit(2.0) * log_ratio * lambda_max).sqrt(), -log_ratio)
    } else {
        (T::zero(), T::infinity())
    };
    let splat = Splat2D {
        mean2d,
        cov2d,
        conic,
        camera_depth: z,
        color: g.color,
        opacity,
        source_index: index,
        radius,
        min_power,
    };
    Ok(Some((
        splat,
        Projection {
            cam_point: p,
            jacobian: j,
            cam_cov: v,
        },
    )))
}

/// EWA projection of one Gaussian; `None` when it lies behind the near plane.
pub fn project_gaussian<T: Real>(
    g: &Gaussian3D<T>,
    cam: &Camera<T>,
    settings: &RenderSettings<T>,
) -> Result<Option<Splat2D<T>>> {
    Ok(project_full(g, 0, cam, settings)?.map(|(s, _)| s))
}

/// Per-pixel state needed to replay compositing in the backward pass.
#[derive(Clone, Debug)]
pub struct RenderRecord<T> {
    pub fingerprint: u64,
    /// False for records produced by the reference renderer.
    pub tiled: bool,
    pub scene_len: usize,
    pub width: usize,
    pub height: usize,
    pub background: [T; 3],
    pub settings: RenderSettings<T>,
    /// Number of tile-list entries each pixel composited.
    pub n_contrib: Vec<u32>,
    pub final_transmittance: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub image: ImageBuffer<T>,
    pub depth: DepthBuffer<T>,
    pub record: RenderRecord<T>,
}

/// Alpha of a splat at pixel center `(px, py)`; also returns the Gaussian
/// falloff and whether the clamp is active.
#[inline(always)]
pub(crate) fn splat_alpha<T: Real>(s: &Splat2D<T>, px: T, py: T, alpha_max: T) -> (T, T, T, T, bool) {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let power = -T::lit(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    let g = power.exp();
    let a = s.opacity * g;
    if a > alpha_max {
        (alpha_max, g, dx, dy, true)
    } else {
        (a, g, dx, dy, false)
    }
}

/// [`splat_alpha`] for the tiled paths: `None` where the splat's alpha is
/// below the floor, so the pixel skips it.
#[inline(always)]
pub(crate) fn splat_alpha_cut<T: Real>(s: &Splat2D<T>, px: T, py: T, alpha_max: T) -> Option<(T, T, T, T, bool)> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let power = -T::lit(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
    if power < s.min_power {
        return None;
    }
    let g = power.exp();
    let a = s.opacity * g;
    Some(if a > alpha_max {
        (alpha_max, g, dx, dy, true)
    } else {
        (a, g, dx, dy, false)
    })
}

pub(crate) fn fingerprint<T: Real>(scene: &GaussianScene<T>, cam: &Camera<T>, bg: &[T; 3]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(PRIME);
    };
    for g in &scene.gaussians {
        g.mean.iter().for_each(|v| mix(v.bits()));
        g.log_scale.iter().for_each(|v| mix(v.bits()));
        g.rotation.iter().for_each(|v| mix(v.bits()));
        mix(g.opacity_logit.bits());
        g.color.iter().for_each(|v| mix(v.bits()));
    }
    cam.rotation.iter().flatten().for_each(|v| mix(v.bits()));
    cam.translation.iter().for_each(|v| mix(v.bits()));
    mix(cam.focal.bits());
    mix(cam.width as u64);
    mix(cam.height as u64);
    bg.iter().for_each(|v| mix(v.bits()));
    h
}

/// Projects and depth-sorts all visible splats (ties broken by index).
pub(crate) fn prepare<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    settings: &RenderSettings<T>,
) -> Result<Vec<(Splat2D<T>, Projection<T>)>> {
    let mut splats = Vec::with_capacity(scene.len());
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::InvalidScene(format!("gaussian {i} has non-finite parameters")));
        }
        if let Some(s) = project_full(g, i, cam, settings)? {
            splats.push(s);
        }
    }
    splats.sort_by(|a, b| {
        a.0.camera_depth
            .partial_cmp(&b.0.camera_depth)
            .expect("finite depth")
            .then(a.0.source_index.cmp(&b.0.source_index))
    });
    Ok(splats)
}

pub(crate) struct TileGrid {
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile: usize) -> Self {
        Self {
            tile,
            tiles_x: width.div_ceil(tile),
            tiles_y: height.div_ceil(tile),
            width,
            height,
        }
    }

    pub fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel bounds `(x0, x1, y0, y1)` of a tile, exclusive upper.
    pub fn bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * self.tile;
        let y0 = ty * self.tile;
        (
            x0,
            (x0 + self.tile).min(self.width),
            y0,
            (y0 + self.tile).min(self.height),
        )
    }

    /// Indices into the sorted splat list overlapping each tile, in order.
    pub fn bin<T: Real>(&self, splats: &[(Splat2D<T>, Projection<T>)]) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.count()];
        let tile = T::from_usize_lossy(self.tile);
        for (k, (s, _)) in splats.iter().enumerate() {
            if s.radius <= T::zero() {
                continue;
            }
            // Pixel centers sit at +0.5, so the covered center range is
            // [m - r - 0.5, m + r - 0.5] in integer pixel indices.
            let lo_x = s.mean2d[0] - s.radius - T::lit(0.5);
            let hi_x = s.mean2d[0] + s.radius - T::lit(0.5);
            let lo_y = s.mean2d[1] - s.radius - T::lit(0.5);
            let hi_y = s.mean2d[1] + s.radius - T::lit(0.5);
            let w = T::from_usize_lossy(self.width);
            let h = T::from_usize_lossy(self.height);
            if hi_x < T::zero() || hi_y < T::zero() || lo_x >= w || lo_y >= h {
                continue;
            }
            let clamp_tile = |v: T, n: usize| -> usize {
                let t = (v.max(T::zero()) / tile).floor().as_f64();
                (t as usize).min(n - 1)
            };
            let (tx0, tx1) = (clamp_tile(lo_x, self.tiles_x), clamp_tile(hi_x, self.tiles_x));
            let (ty0, ty1) = (clamp_tile(lo_y, self.tiles_y), clamp_tile(hi_y, self.tiles_y));
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * self.tiles_x + tx].push(k as u32);
                }
            }
        }
        lists
    }
}

struct TileOut<T> {
    color: Vec<[T; 3]>,
    depth: Vec<T>,
    transmittance: Vec<T>,
    n_contrib: Vec<u32>,
}

fn shade_tile<T: Real>(
    grid: &TileGrid,
    t: usize,
    list: &[u32],
    splats: &[(Splat2D<T>, Projection<T>)],
    bg: &[T; 3],
    settings: &RenderSettings<T>,
) -> TileOut<T> {
    let (x0, x1, y0, y1) = grid.bounds(t);
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileOut {
        color: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        transmittance: Vec::with_capacity(n),
        n_contrib: Vec::with_capacity(n),
    };
    let half = T::lit(0.5);
    for y in y0..y1 {
        let py = T::from_usize_lossy(y) + half;
        for x in x0..x1 {
            let px = T::from_usize_lossy(x) + half;
            let mut trans = T::one();
            let mut c = [T::zero(); 3];
            let mut d = T::zero();
            let mut count = 0u32;
            for &k in list {
                let s = &splats[k as usize].0;
                count += 1;
                let Some((a, ..)) = splat_alpha_cut(s, px, py, settings.alpha_max) else {
                    continue;
                };
                let wgt = a * trans;
                c[0] += s.color[0] * wgt;
                c[1] += s.color[1] * wgt;
                c[2] += s.color[2] * wgt;
                d += s.camera_depth * wgt;
                trans *= T::one() - a;
                if trans < settings.transmittance_min {
                    break;
                }
            }
            out.color.push([
                c[0] + trans * bg[0],
                c[1] + trans * bg[1],
                c[2] + trans * bg[2],
            ]);
            out.depth.push(d);
            out.transmittance.push(trans);
            out.n_contrib.push(count);
        }
    }
    out
}

/// Renders `scene` from `cam` with the default settings.
pub fn render<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    background: [T; 3],
) -> Result<RenderOutput<T>> {
    render_with(scene, cam, background, &RenderSettings::default())
}

/// Tiled front-to-back compositing with early termination.
pub fn render_with<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    background: [T; 3],
    settings: &RenderSettings<T>,
) -> Result<RenderOutput<T>> {
    let splats = prepare(scene, cam, settings)?;
    let (w, h) = (cam.width, cam.height);
    let grid = TileGrid::new(w, h, settings.tile_size);
    let lists = grid.bin(&splats);
    let tiles: Vec<TileOut<T>> = (0..grid.count())
        .into_par_iter()
        .map(|t| shade_tile(&grid, t, &lists[t], &splats, &background, settings))
        .collect();

    let mut image = ImageBuffer::filled(h, w, [T::zero(); 3]);
    let mut depth = DepthBuffer::zeros(h, w);
    let mut n_contrib = vec![0u32; w * h];
    let mut final_t = vec![T::one(); w * h];
    for (t, out) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                image.pixels[p * 3..p * 3 + 3].copy_from_slice(&out.color[i]);
                depth.depth[p] = out.depth[i];
                depth.alpha[p] = T::one() - out.transmittance[i];
                n_contrib[p] = out.n_contrib[i];
                final_t[p] = out.transmittance[i];
                i += 1;
            }
        }
    }
    Ok(RenderOutput {
        image,
        depth,
        record: RenderRecord {
            fingerprint: fingerprint(scene, cam, &background),
            tiled: true,
            scene_len: scene.len(),
            width: w,
            height: h,
            background,
            settings: *settings,
            n_contrib,
            final_transmittance: final_t,
        },
    })
}

/// Brute-force oracle: every pixel composites every projected splat, with no
/// tiling, support cutoff or early termination.
pub fn render_reference<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    background: [T; 3],
) -> Result<RenderOutput<T>> {
    render_reference_with(scene, cam, background, &RenderSettings::default())
}

pub fn render_reference_with<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    background: [T; 3],
    settings: &RenderSettings<T>,
) -> Result<RenderOutput<T>> {
    let splats = prepare(scene, cam, settings)?;
    let (w, h) = (cam.width, cam.height);
    let half = T::lit(0.5);
    let rows: Vec<Vec<([T; 3], T, T)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let py = T::from_usize_lossy(y) + half;
            (0..w)
                .map(|x| {
                    let px = T::from_usize_lossy(x) + half;
                    let mut trans = T::one();
                    let mut c = [T::zero(); 3];
                    let mut d = T::zero();
                    for (s, _) in &splats {
                        let (a, ..) = splat_alpha(s, px, py, settings.alpha_max);
                        let wgt = a * trans;
                        c[0] += s.color[0] * wgt;
                        c[1] += s.color[1] * wgt;
                        c[2] += s.color[2] * wgt;
                        d += s.camera_depth * wgt;
                        trans *= T::one() - a;
                    }
                    (
                        [
                            c[0] + trans * background[0],
                            c[1] + trans * background[1],
                            c[2] + trans * background[2],
                        ],
                        d,
                        trans,
                    )
                })
                .collect()
        })
        .collect();
    let mut image = ImageBuffer::filled(h, w, [T::zero(); 3]);
    let mut depth = DepthBuffer::zeros(h, w);
    let mut final_t = vec![T::one(); w * h];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, d, t)) in row.into_iter().enumerate() {
            let p = y * w + x;
            image.pixels[p * 3..p * 3 + 3].copy_from_slice(&c);
            depth.depth[p] = d;
            depth.alpha[p] = T::one() - t;
            final_t[p] = t;
        }
    }
    Ok(RenderOutput {
        image,
        depth,
        record: RenderRecord {
            fingerprint: fingerprint(scene, cam, &background),
            tiled: false,
            scene_len: scene.len(),
            width: w,
            height: h,
            background,
            settings: *settings,
            n_contrib: vec![splats.len() as u32; w * h],
            final_transmittance: final_t,
        },
    })
}
