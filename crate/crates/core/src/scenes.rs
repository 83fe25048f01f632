//! Seeded procedural Gaussian scenes: dataset objects and random test scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitBall};

use crate::gaussian::{unit_quat_to_rotmat, Gaussian3D, GaussianScene};
use crate::linalg::matvec3;

/// Radius of the sphere every procedural object fits in.
pub const OBJECT_RADIUS: f64 = 1.0;

fn unit_ball(rng: &mut ChaCha8Rng) -> [f64; 3] {
    UnitBall.sample(rng)
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            return q.map(|v| v / n);
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// A procedural object: 3–8 ellipsoidal clusters of 50–400 Gaussians, each
/// cluster with its own hue, all inside the unit sphere.
pub fn gen_object(seed: u64) -> GaussianScene<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = rng.random_range(3..=8usize);
    let hue0: f64 = rng.random();
    let mut gaussians = Vec::new();
    for k in 0..clusters {
        let center = unit_ball(&mut rng).map(|v| v * 0.5);
        let axes: [f64; 3] = [0; 3].map(|_| rng.random_range(0.12..0.4));
        let rot = unit_quat_to_rotmat(random_unit_quat(&mut rng));
        let count = rng.random_range(50..=400usize);
        let base = hsv_to_rgb(
            hue0 + k as f64 / clusters as f64,
            rng.random_range(0.6..0.9),
            rng.random_range(0.55..0.95),
        );
        let spacing = (axes[0] * axes[1] * axes[2] / count as f64).cbrt();
        for _ in 0..count {
            let u = unit_ball(&mut rng);
            let local = [u[0] * axes[0], u[1] * axes[1], u[2] * axes[2]];
            let off = matvec3(&rot, &local);
            let mean = [center[0] + off[0], center[1] + off[1], center[2] + off[2]];
            let sigma = 0.9 * spacing * rng.random_range(0.8..1.2);
            let log_scale = [0; 3].map(|_| (sigma * rng.random_range(0.8..1.25f64)).ln());
            let color = base.map(|c| (c + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0));
            gaussians.push(Gaussian3D {
                mean,
                log_scale,
                rotation: random_unit_quat(&mut rng),
                opacity_logit: rng.random_range(2.0..3.0),
                color,
            });
        }
    }
    GaussianScene::new(gaussians, OBJECT_RADIUS)
}

/// Unstructured random scene for rasterizer tests: `count` Gaussians with
/// means in a ball of radius 0.8, mixed sizes, opacities and raw quaternions.
pub fn random_scene(seed: u64, count: usize) -> GaussianScene<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..count)
        .map(|_| Gaussian3D {
            mean: unit_ball(&mut rng).map(|v| v * 0.8),
            log_scale: [0; 3].map(|_| rng.random_range(0.03f64.ln()..0.25f64.ln())),
            rotation: [0; 4].map(|_| rng.random_range(-1.0..1.0)),
            opacity_logit: rng.random_range(-2.0..4.0),
            color: [0; 3].map(|_| rng.random_range(0.0..1.0)),
        })
        .collect();
    GaussianScene::new(gaussians, OBJECT_RADIUS)
}
