use rayon::prelude::*;

use super::{fingerprint, prepare, splat_alpha_cut, Projection, Splat2D, TileGrid};
use crate::camera::Camera;
use crate::gaussian::{
    rotmat_grad_to_quat, scale_unclamped, unit_quat_to_rotmat, normalize_quat, GaussianScene,
};
use crate::linalg::{matmul3, transpose3, zero3, Mat3};
use crate::raster::RenderOutput;
use crate::{Error, Real, Result};

/// Gradient with respect to the raw (pre-activation) parameters of one
/// Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad<T> {
    pub mean: [T; 3],
    pub log_scale: [T; 3],
    pub rotation: [T; 4],
    pub opacity_logit: T,
    pub color: [T; 3],
}

impl<T: Real> GaussianGrad<T> {
    pub fn zero() -> Self {
        Self {
            mean: [T::zero(); 3],
            log_scale: [T::zero(); 3],
            rotation: [T::zero(); 4],
            opacity_logit: T::zero(),
            color: [T::zero(); 3],
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for i in 0..3 {
            self.mean[i] += o.mean[i];
            self.log_scale[i] += o.log_scale[i];
            self.color[i] += o.color[i];
        }
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.opacity_logit += o.opacity_logit;
    }

    /// Flattened as mean, log_scale, rotation, opacity_logit, color.
    pub fn to_array(&self) -> [T; 14] {
        let mut a = [T::zero(); 14];
        a[0..3].copy_from_slice(&self.mean);
        a[3..6].copy_from_slice(&self.log_scale);
        a[6..10].copy_from_slice(&self.rotation);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color);
        a
    }
}

/// Screen-space gradient accumulated per splat.
#[derive(Clone, Copy, Debug)]
struct Grad2D<T> {
    mean2d: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    depth: T,
}

impl<T: Real> Grad2D<T> {
    fn zero() -> Self {
        Self {
            mean2d: [T::zero(); 2],
            conic: [T::zero(); 3],
            opacity: T::zero(),
            color: [T::zero(); 3],
            depth: T::zero(),
        }
    }

    fn add(&mut self, o: &Self) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

struct Replay<T> {
    list_pos: usize,
    alpha: T,
    gauss: T,
    dx: T,
    dy: T,
    clamped: bool,
    trans: T,
}

#[allow(clippy::too_many_arguments)]
fn tile_backward<T: Real>(
    grid: &TileGrid,
    t: usize,
    list: &[u32],
    splats: &[(Splat2D<T>, Projection<T>)],
    out: &RenderOutput<T>,
    d_image: &[T],
    d_depth: &[T],
) -> Result<Vec<Grad2D<T>>> {
    let rec = &out.record;
    let settings = &rec.settings;
    let bg = rec.background;
    let (x0, x1, y0, y1) = grid.bounds(t);
    let mut acc = vec![Grad2D::zero(); list.len()];
    let mut replay: Vec<Replay<T>> = Vec::new();
    let half = T::lit(0.5);
    for y in y0..y1 {
        let py = T::from_usize_lossy(y) + half;
        for x in x0..x1 {
            let px = T::from_usize_lossy(x) + half;
            let p = y * grid.width + x;
            let n = rec.n_contrib[p] as usize;
            if n > list.len() {
                return Err(Error::Contract(format!(
                    "pixel ({x}, {y}) recorded {n} contributions but tile holds {}",
                    list.len()
                )));
            }
            replay.clear();
            let mut trans = T::one();
            for (pos, &k) in list[..n].iter().enumerate() {
                let s = &splats[k as usize].0;
                let Some((alpha, gauss, dx, dy, clamped)) = splat_alpha_cut(s, px, py, settings.alpha_max) else {
                    continue;
                };
                replay.push(Replay {
                    list_pos: pos,
                    alpha,
                    gauss,
                    dx,
                    dy,
                    clamped,
                    trans,
                });
                trans *= T::one() - alpha;
            }
            if trans != rec.final_transmittance[p] {
                return Err(Error::Contract(format!(
                    "pixel ({x}, {y}) does not replay the recorded transmittance"
                )));
            }
            let gc = [d_image[p * 3], d_image[p * 3 + 1], d_image[p * 3 + 2]];
            let gd = d_depth[p];
            if gc.iter().all(|v| v.is_zero()) && gd.is_zero() {
                continue;
            }
            // Weighted sum of everything behind the current splat, including
            // the background term.
            let mut behind = (gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2]) * trans;
            for r in replay.iter().rev() {
                let s = &splats[list[r.list_pos] as usize].0;
                let wsum = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2]
                    + gd * s.camera_depth;
                let weight = r.alpha * r.trans;
                let d_alpha = wsum * r.trans - behind / (T::one() - r.alpha);
                behind += wsum * weight;
                let g = &mut acc[r.list_pos];
                g.color[0] += gc[0] * weight;
                g.color[1] += gc[1] * weight;
                g.color[2] += gc[2] * weight;
                g.depth += gd * weight;
                if !r.clamped {
                    g.opacity += d_alpha * r.gauss;
                    let d_power = d_alpha * r.alpha;
                    let (dx, dy) = (r.dx, r.dy);
                    g.conic[0] -= T::lit(0.5) * d_power * dx * dx;
                    g.conic[1] -= d_power * dx * dy;
                    g.conic[2] -= T::lit(0.5) * d_power * dy * dy;
                    g.mean2d[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                    g.mean2d[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                }
            }
        }
    }
    Ok(acc)
}

/// Chains a screen-space gradient back to the raw Gaussian parameters.
fn lift<T: Real>(
    scene: &GaussianScene<T>,
    splat: &Splat2D<T>,
    proj: &Projection<T>,
    cam: &Camera<T>,
    g2: &Grad2D<T>,
) -> GaussianGrad<T> {
    let g = &scene.gaussians[splat.source_index];
    let mut out = GaussianGrad::zero();
    out.color = g2.color;
    let o = splat.opacity;
    out.opacity_logit = g2.opacity * o * (T::one() - o);

    // conic -> cov2d: dΣ₂ = -K G K with G the symmetric-matrix gradient.
    let k = [[splat.conic[0], splat.conic[1]], [splat.conic[1], splat.conic[2]]];
    let gm = [
        [g2.conic[0], T::lit(0.5) * g2.conic[1]],
        [T::lit(0.5) * g2.conic[1], g2.conic[2]],
    ];
    let mut kg = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            kg[i][j] = k[i][0] * gm[0][j] + k[i][1] * gm[1][j];
        }
    }
    let mut d_cov2 = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            d_cov2[i][j] = -(kg[i][0] * k[0][j] + kg[i][1] * k[1][j]);
        }
    }

    let j = &proj.jacobian;
    let v = &proj.cam_cov;
    // dV = Jᵀ dΣ₂ J
    let mut d_v = zero3();
    for a in 0..3 {
        for b in 0..3 {
            let mut s = T::zero();
            for r in 0..2 {
                for c in 0..2 {
                    s += j[r][a] * d_cov2[r][c] * j[c][b];
                }
            }
            d_v[a][b] = s;
        }
    }
    // dJ = 2 dΣ₂ J V
    let mut jv = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jv[r][c] = j[r][0] * v[0][c] + j[r][1] * v[1][c] + j[r][2] * v[2][c];
        }
    }
    let mut d_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = T::lit(2.0) * (d_cov2[r][0] * jv[0][c] + d_cov2[r][1] * jv[1][c]);
        }
    }

    let f = cam.focal;
    let [x, y, z] = proj.cam_point;
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_p = [T::zero(); 3];
    d_p[0] += d_j[0][2] * (-f * iz2);
    d_p[1] += d_j[1][2] * (-f * iz2);
    d_p[2] += (d_j[0][0] + d_j[1][1]) * (-f * iz2)
        + d_j[0][2] * (T::lit(2.0) * f * x * iz3)
        + d_j[1][2] * (T::lit(2.0) * f * y * iz3);
    d_p[0] += g2.mean2d[0] * f * iz;
    d_p[1] += g2.mean2d[1] * f * iz;
    d_p[2] -= (g2.mean2d[0] * x + g2.mean2d[1] * y) * f * iz2;
    d_p[2] += g2.depth;

    let w = &cam.rotation;
    out.mean = crate::linalg::matvec3_t(w, &d_p);

    // dΣ = Wᵀ dV W
    let d_sigma = matmul3(&matmul3(&transpose3(w), &d_v), w);
    let q = normalize_quat(g.rotation).expect("validated during projection");
    let rot = unit_quat_to_rotmat(q);
    let s = g.scale();
    let mut m: Mat3<T> = rot;
    for row in m.iter_mut() {
        for c in 0..3 {
            row[c] *= s[c];
        }
    }
    // dM = 2 dΣ M
    let mut d_m = matmul3(&d_sigma, &m);
    for row in d_m.iter_mut() {
        for v in row.iter_mut() {
            *v *= T::lit(2.0);
        }
    }
    let mut d_rot = zero3();
    let mut d_s = [T::zero(); 3];
    for r in 0..3 {
        for c in 0..3 {
            d_rot[r][c] = d_m[r][c] * s[c];
            d_s[c] += d_m[r][c] * rot[r][c];
        }
    }
    for c in 0..3 {
        if scale_unclamped(g.log_scale[c]) {
            out.log_scale[c] = d_s[c] * s[c];
        }
    }
    out.rotation = rotmat_grad_to_quat(g.rotation, &d_rot);
    out
}

/// Gradients of `⟨d_image, image⟩ + ⟨d_depth, depth⟩` with respect to every
/// raw Gaussian parameter, for the forward pass recorded in `forward`.
pub fn render_backward<T: Real>(
    scene: &GaussianScene<T>,
    cam: &Camera<T>,
    forward: &RenderOutput<T>,
    d_image: &[T],
    d_depth: &[T],
) -> Result<Vec<GaussianGrad<T>>> {
    let rec = &forward.record;
    if !rec.tiled {
        return Err(Error::Contract(
            "backward needs a record from the tiled renderer".into(),
        ));
    }
    if rec.scene_len != scene.len()
        || rec.width != cam.width
        || rec.height != cam.height
        || rec.fingerprint != fingerprint(scene, cam, &rec.background)
    {
        return Err(Error::Contract(
            "render record does not belong to this scene and camera".into(),
        ));
    }
    let npix = cam.width * cam.height;
    if d_image.len() != npix * 3 || d_depth.len() != npix {
        return Err(Error::Shape(format!(
            "upstream gradients have {} / {} entries for {npix} pixels",
            d_image.len(),
            d_depth.len()
        )));
    }
    let splats = prepare(scene, cam, &rec.settings)?;
    let grid = TileGrid::new(cam.width, cam.height, rec.settings.tile_size);
    let lists = grid.bin(&splats);
    let per_tile: Vec<Vec<Grad2D<T>>> = (0..grid.count())
        .into_par_iter()
        .map(|t| tile_backward(&grid, t, &lists[t], &splats, forward, d_image, d_depth))
        .collect::<Result<_>>()?;

    // Fixed reduction order: tiles in raster order.
    let mut grads2d = vec![Grad2D::zero(); splats.len()];
    for (t, tile) in per_tile.iter().enumerate() {
        for (pos, g) in tile.iter().enumerate() {
            grads2d[lists[t][pos] as usize].add(g);
        }
    }
    let lifted: Vec<(usize, GaussianGrad<T>)> = splats
        .par_iter()
        .zip(grads2d.par_iter())
        .map(|((s, p), g2)| (s.source_index, lift(scene, s, p, cam, g2)))
        .collect();
    let mut out = vec![GaussianGrad::zero(); scene.len()];
    for (i, g) in lifted {
        out[i] = g;
    }
    Ok(out)
}
