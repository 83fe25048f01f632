//! Binary little-endian PLY export and import of Gaussian scenes.
//!
//! One vertex per Gaussian with float properties `x y z`, `scale_0..2`
//! (log scale), `rot_0..3` (raw quaternion `w x y z`), `opacity` (logit) and
//! `red green blue`. The bounding radius travels in a `comment bound_radius`
//! header line.

use std::fs;
use std::path::Path;

use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::{Error, Real, Result};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red",
    "green", "blue",
];

fn to_row<T: Real>(g: &Gaussian3D<T>) -> [f32; 14] {
    let mut r = [0f32; 14];
    let vals = g
        .mean
        .iter()
        .chain(&g.log_scale)
        .chain(&g.rotation)
        .chain(std::iter::once(&g.opacity_logit))
        .chain(&g.color);
    for (dst, v) in r.iter_mut().zip(vals) {
        *dst = v.as_f32();
    }
    r
}

/// Serialize a scene to PLY bytes.
pub fn ply_bytes<T: Real>(scene: &GaussianScene<T>) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment bound_radius {}\nelement vertex {}\n",
        scene.bound_radius.as_f32(),
        scene.len()
    );
    for p in PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(scene.len() * 14 * 4);
    for g in &scene.gaussians {
        for v in to_row(g) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn export_ply<T: Real>(scene: &GaussianScene<T>, path: &Path) -> Result<()> {
    fs::write(path, ply_bytes(scene)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parse PLY bytes produced by [`ply_bytes`].
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<GaussianScene<f32>> {
    let bad = |m: String| Error::format(path, m);
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("no end_header line".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(bad("not a binary little-endian PLY file".into()));
    }
    let mut count = None;
    let mut radius = None;
    let mut props = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["comment", "bound_radius", r] => {
                radius = Some(r.parse::<f32>().map_err(|_| bad(format!("bad radius {r}")))?)
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?)
            }
            ["property", "float", name] => props.push(*name),
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    if props != PROPERTIES {
        return Err(bad(format!("property list {props:?} does not match the Gaussian layout")));
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let body = &bytes[end + marker.len()..];
    if body.len() != count * 14 * 4 {
        return Err(bad(format!("body has {} bytes, expected {}", body.len(), count * 56)));
    }
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let gaussians = vals
        .chunks_exact(14)
        .map(|r| Gaussian3D {
            mean: [r[0], r[1], r[2]],
            log_scale: [r[3], r[4], r[5]],
            rotation: [r[6], r[7], r[8], r[9]],
            opacity_logit: r[10],
            color: [r[11], r[12], r[13]],
        })
        .collect();
    let scene = match radius {
        Some(r) => GaussianScene::new(gaussians, r),
        None => GaussianScene::fitted(gaussians),
    };
    Ok(scene)
}

pub fn import_ply(path: &Path) -> Result<GaussianScene<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_ply(&bytes, path)
}
