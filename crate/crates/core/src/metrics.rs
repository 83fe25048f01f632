//! Appearance metrics (PSNR, SSIM) and point-cloud geometry metrics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::gaussian::{unit_quat_to_rotmat, GaussianScene};
use crate::image::ImageBuffer;
use crate::linalg::matvec3;
use crate::{Error, Real, Result};

/// PSNR reported for (near) identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Points sampled per scene for geometry metrics.
pub const EVAL_POINTS: usize = 4096;
/// Default voxel grid resolution for IoU.
pub const IOU_RESOLUTION: usize = 32;
/// Default F-score threshold as a fraction of the scene extent.
pub const FSCORE_TAU_FRACTION: f64 = 0.05;

/// Peak signal-to-noise ratio with peak 1, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "psnr of {}x{} and {}x{} images",
            a.height, a.width, b.height, b.width
        )));
    }
    let n = a.pixels.len().max(1) as f64;
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of a `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5) over positions
/// where the window fits, averaged over channels and positions.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "ssim of {}x{} and {}x{} images",
            a.height, a.width, b.height, b.width
        )));
    }
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let pa: Vec<f64> = (0..h * w).map(|i| a.pixels[i * 3 + ch].as_f64()).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.pixels[i * 3 + ch].as_f64()).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let e_aa = filter_valid(&prod(&pa, &pa), h, w, &k);
        let e_bb = filter_valid(&prod(&pb, &pb), h, w, &k);
        let e_ab = filter_valid(&prod(&pa, &pb), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<[T; 3]>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud has no points".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            points: self.points.iter().map(|p| p.map(|v| v * s)).collect(),
        }
    }
}

/// Draw `n` points: Gaussians are chosen with probability proportional to
/// opacity times volume, then a point is drawn from the chosen 3D normal.
pub fn sample_points<T: Real>(scene: &GaussianScene<T>, n: usize, seed: u64) -> Result<PointCloud<T>> {
    if scene.is_empty() {
        return Err(Error::Empty("cannot sample points from an empty scene".into()));
    }
    let weights: Vec<f64> = scene
        .gaussians
        .iter()
        .map(|g| g.opacity().as_f64() * g.scale().iter().map(|s| s.as_f64()).product::<f64>())
        .collect();
    let chooser = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidScene(format!("sampling weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let g = &scene.gaussians[chooser.sample(&mut rng)];
        let r = unit_quat_to_rotmat(g.unit_rotation()?);
        let s = g.scale();
        let z: [T; 3] = [0; 3].map(|_| T::lit(StandardNormal.sample(&mut rng)));
        let off = matvec3(&r, &[s[0] * z[0], s[1] * z[1], s[2] * z[2]]);
        points.push([g.mean[0] + off[0], g.mean[1] + off[1], g.mean[2] + off[2]]);
    }
    PointCloud::new(points)
}

fn dist2<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Static k-d tree over a point set for exact nearest-neighbor queries.
pub struct KdTree<'a, T> {
    points: &'a [[T; 3]],
    /// Point indices laid out as an implicit balanced tree: the median of
    /// each range is its node, split on `depth % 3`.
    order: Vec<usize>,
}

impl<'a, T: Real> KdTree<'a, T> {
    pub fn build(points: &'a [[T; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build_range(points, &mut order, 0);
        Self { points, order }
    }

    fn build_range(points: &[[T; 3]], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let (left, right) = idx.split_at_mut(mid);
        Self::build_range(points, left, depth + 1);
        Self::build_range(points, &mut right[1..], depth + 1);
    }

    /// Squared distance to, and index of, the nearest point.
    pub fn nearest(&self, q: &[T; 3]) -> (T, usize) {
        let mut best = (T::infinity(), usize::MAX);
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &[T; 3], lo: usize, hi: usize, depth: usize, best: &mut (T, usize)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d = dist2(q, p);
        if d < best.0 || (d == best.0 && i < best.1) {
            *best = (d, i);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.0 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

/// Brute-force nearest neighbor, ties broken by lowest index.
pub fn nearest_brute<T: Real>(points: &[[T; 3]], q: &[T; 3]) -> (T, usize) {
    let mut best = (T::infinity(), usize::MAX);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(q, p);
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

/// Euclidean distance from every point of `from` to its nearest point in `to`.
pub fn nn_distances<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>) -> Vec<T> {
    let tree = KdTree::build(&to.points);
    from.points.par_iter().map(|q| tree.nearest(q).0.sqrt()).collect()
}

fn mean<T: Real>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

/// Symmetric chamfer distance: half the sum of the two mean nearest-neighbor
/// Euclidean distances.
pub fn chamfer<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer of an empty cloud".into()));
    }
    Ok(T::lit(0.5) * (mean(&nn_distances(a, b)) + mean(&nn_distances(b, a))))
}

/// F-score at threshold `tau`.
pub fn fscore<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>, tau: T) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("fscore of an empty cloud".into()));
    }
    if !(tau > T::zero()) {
        return Err(Error::InvalidParameter(format!("fscore threshold {tau} must be > 0")));
    }
    let frac = |d: Vec<T>| {
        let n = d.len();
        T::from_usize_lossy(d.into_iter().filter(|&x| x <= tau).count()) / T::from_usize_lossy(n)
    };
    let precision = frac(nn_distances(a, b));
    let recall = frac(nn_distances(b, a));
    if precision + recall == T::zero() {
        return Ok(T::zero());
    }
    Ok(T::lit(2.0) * precision * recall / (precision + recall))
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<T> {
    pub min: [T; 3],
    pub max: [T; 3],
}

impl<T: Real> Bounds<T> {
    /// Cube `[-r, r]³`.
    pub fn cube(r: T) -> Self {
        Self {
            min: [-r; 3],
            max: [r; 3],
        }
    }
}

fn voxelize<T: Real>(c: &PointCloud<T>, res: usize, bounds: &Bounds<T>) -> std::collections::BTreeSet<[usize; 3]> {
    let r = T::from_usize_lossy(res);
    c.points
        .iter()
        .filter_map(|p| {
            let mut v = [0usize; 3];
            for k in 0..3 {
                if p[k] < bounds.min[k] || p[k] > bounds.max[k] {
                    return None;
                }
                let f = ((p[k] - bounds.min[k]) / (bounds.max[k] - bounds.min[k]) * r).floor();
                v[k] = f.to_usize().unwrap_or(0).min(res - 1);
            }
            Some(v)
        })
        .collect()
}

/// Intersection over union of occupied voxels on a `resolution³` grid.
/// Points outside `bounds` are ignored.
pub fn iou_voxel<T: Real>(
    a: &PointCloud<T>,
    b: &PointCloud<T>,
    resolution: usize,
    bounds: &Bounds<T>,
) -> Result<T> {
    if resolution < 2 {
        return Err(Error::InvalidParameter(format!("voxel resolution {resolution} must be >= 2")));
    }
    if (0..3).any(|k| !(bounds.max[k] > bounds.min[k])) {
        return Err(Error::InvalidParameter("degenerate voxel bounds".into()));
    }
    let va = voxelize(a, resolution, bounds);
    let vb = voxelize(b, resolution, bounds);
    let union = va.union(&vb).count();
    if union == 0 {
        return Ok(T::zero());
    }
    Ok(T::from_usize_lossy(va.intersection(&vb).count()) / T::from_usize_lossy(union))
}
