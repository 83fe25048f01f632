//! Multi-view RGB and depth datasets rendered from procedural objects.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! obj_0000/scene.json
//! obj_0000/view_00.png     RGBA8, alpha channel = accumulated opacity
//! obj_0000/depth_00.dpth   "DPTH", u32 height, u32 width, u32 reserved, f32 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{focal_from_fov, make_orbit_cameras, select_input_views, Camera, CameraSpec};
use crate::gaussian::GaussianScene;
use crate::image::{dequantize_u8, quantize_u8, DepthBuffer, ImageBuffer};
use crate::raster::render_reference;
use crate::scenes::gen_object;
use crate::{Error, Result};

/// Views per object in the training protocol.
pub const TRAIN_VIEWS: usize = 84;
/// Input views selected from the training views.
pub const INPUT_VIEWS: usize = 16;
/// Views per object in the evaluation protocol.
pub const EVAL_SET_VIEWS: usize = 21;
/// Elevation range in degrees.
pub const ELEVATION_RANGE_DEG: [f64; 2] = [-5.0, 30.0];

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub object_count: usize,
    pub views_per_object: usize,
    pub input_views: usize,
    pub elevation_range_deg: [f64; 2],
    pub resolution: usize,
    pub radius: f64,
    pub fov_deg: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            object_count: 2,
            views_per_object: TRAIN_VIEWS,
            input_views: INPUT_VIEWS,
            elevation_range_deg: ELEVATION_RANGE_DEG,
            resolution: 64,
            radius: 3.0,
            fov_deg: crate::camera::DEFAULT_FOV_DEG,
            background: [1.0; 3],
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.object_count == 0 {
            return bad("object_count must be >= 1".into());
        }
        if self.input_views == 0 || self.input_views > self.views_per_object {
            return bad(format!(
                "input_views {} must be in 1..={}",
                self.input_views, self.views_per_object
            ));
        }
        let [lo, hi] = self.elevation_range_deg;
        if !(lo <= hi && lo > -90.0 && hi < 90.0) {
            return bad(format!("elevation range [{lo}, {hi}] is invalid"));
        }
        if self.resolution == 0 || !(self.radius > 0.0) || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("resolution, radius and fov must be positive".into());
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        focal_from_fov(self.fov_deg, self.resolution)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub seed: u64,
    pub elevation_deg: f64,
    pub scene: String,
    pub cameras: Vec<CameraSpec>,
    pub images: Vec<String>,
    pub depths: Vec<String>,
    pub input_views: Vec<usize>,
    pub conditioning_view: usize,
    pub eval_views: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub config: DatasetConfig,
    pub objects: Vec<ObjectEntry>,
}

impl DatasetManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("parsing {}", path.display()),
            source,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&Self::path(dir), self)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: format!("serializing {}", path.display()),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: format!("parsing {}", path.display()),
        source,
    })
}

/// Write an RGBA8 PNG whose alpha channel stores `alpha`.
pub fn write_rgba_png(path: &Path, image: &ImageBuffer<f64>, alpha: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(image.height * image.width * 4);
    for (i, &a) in alpha.iter().enumerate() {
        buf.extend(image.pixels[i * 3..i * 3 + 3].iter().map(|&v| quantize_u8(v)));
        buf.push(quantize_u8(a));
    }
    image::save_buffer(
        path,
        &buf,
        image.width as u32,
        image.height as u32,
        image::ExtendedColorType::Rgba8,
    )
    .map_err(|source| Error::Image {
        context: format!("writing {}", path.display()),
        source,
    })
}

/// Read an 8-bit PNG as RGB in `[0, 1]` plus its alpha channel (1 when absent).
pub fn read_png(path: &Path) -> Result<(ImageBuffer<f32>, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            context: format!("reading {}", path.display()),
            source,
        })?
        .to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let rgb: Vec<u8> = raw.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let alpha = raw.chunks_exact(4).map(|p| dequantize_u8(p[3])).collect();
    Ok((ImageBuffer::from_rgb8(h, w, &rgb)?, alpha))
}

/// Write a depth map in the `DPTH` format.
pub fn write_depth(path: &Path, height: usize, width: usize, depth: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + depth.len() * 4);
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &d in depth {
        buf.extend_from_slice(&(d as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Read a `DPTH` depth map as `(height, width, values)`.
pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if buf.len() < 16 || &buf[..4] != DEPTH_MAGIC {
        return Err(Error::format(path, "missing DPTH header"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (word(4), word(8));
    if buf.len() != 16 + h * w * 4 {
        return Err(Error::format(path, format!("expected {} depth values", h * w)));
    }
    let vals = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, vals))
}

/// Per-object seeds and elevations, drawn in order from the dataset seed.
fn draw_objects(cfg: &DatasetConfig) -> Vec<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [lo, hi] = cfg.elevation_range_deg;
    (0..cfg.object_count)
        .map(|_| (rng.random::<u64>(), rng.random_range(lo..=hi)))
        .collect()
}

fn render_object(
    cfg: &DatasetConfig,
    kind: DatasetKind,
    index: usize,
    seed: u64,
    elevation_deg: f64,
    out_dir: &Path,
) -> Result<ObjectEntry> {
    let id = format!("obj_{index:04}");
    let dir = out_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let scene = gen_object(seed);
    write_json(&dir.join("scene.json"), &scene)?;
    let cams = make_orbit_cameras(
        cfg.views_per_object,
        elevation_deg.to_radians(),
        cfg.radius,
        cfg.focal(),
        cfg.resolution,
        cfg.resolution,
    )?;
    let mut images = Vec::new();
    let mut depths = Vec::new();
    for (v, cam) in cams.iter().enumerate() {
        let out = render_reference(&scene, cam, cfg.background)?;
        let img = format!("{id}/view_{v:02}.png");
        let dep = format!("{id}/depth_{v:02}.dpth");
        let ctx = |e: Error| Error::InvalidScene(format!("{id} view {v}: {e}"));
        write_rgba_png(&out_dir.join(&img), &out.image, &out.depth.alpha).map_err(ctx)?;
        write_depth(&out_dir.join(&dep), cam.height, cam.width, &out.depth.depth).map_err(ctx)?;
        images.push(img);
        depths.push(dep);
    }
    let (input_views, eval_views) = match kind {
        DatasetKind::Train => (select_input_views(cfg.views_per_object, cfg.input_views)?, vec![]),
        DatasetKind::Eval => (vec![0], (1..cfg.views_per_object).collect()),
    };
    Ok(ObjectEntry {
        id: id.clone(),
        seed,
        elevation_deg,
        scene: format!("{id}/scene.json"),
        cameras: cams.iter().map(Camera::spec).collect(),
        images,
        depths,
        conditioning_view: input_views[0],
        input_views,
        eval_views,
    })
}

fn render_set(cfg: &DatasetConfig, kind: DatasetKind, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let objects = draw_objects(cfg)
        .into_par_iter()
        .enumerate()
        .map(|(i, (seed, el))| render_object(cfg, kind, i, seed, el, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        kind,
        config: cfg.clone(),
        objects,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Render a training set: `views_per_object` orbit views per object at one
/// elevation drawn per object, with regularly spaced input views.
pub fn render_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    render_set(cfg, DatasetKind::Train, out_dir)
}

/// Render an evaluation set: view 0 is the conditioning input and every other
/// view is held out for evaluation.
pub fn make_eval_set(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    render_set(cfg, DatasetKind::Eval, out_dir)
}

/// One object's ground truth loaded from disk.
#[derive(Clone, Debug)]
pub struct ObjectData {
    pub scene: GaussianScene<f64>,
    pub cameras: Vec<Camera<f32>>,
    pub images: Vec<ImageBuffer<f32>>,
    /// Depth plus the PNG alpha channel as coverage.
    pub depths: Vec<DepthBuffer<f32>>,
}

impl ObjectData {
    pub fn load(dir: &Path, entry: &ObjectEntry) -> Result<Self> {
        let scene = read_json(&dir.join(&entry.scene))?;
        let cameras = entry
            .cameras
            .iter()
            .map(|c| c.build())
            .collect::<Result<Vec<_>>>()?;
        let mut images = Vec::new();
        let mut depths = Vec::new();
        for (img, dep) in entry.images.iter().zip(&entry.depths) {
            let (im, alpha) = read_png(&dir.join(img))?;
            let (h, w, d) = read_depth(&dir.join(dep))?;
            if (h, w) != (im.height, im.width) {
                return Err(Error::format(dir.join(dep), "depth and image sizes differ"));
            }
            images.push(im);
            depths.push(DepthBuffer {
                height: h,
                width: w,
                depth: d,
                alpha,
            });
        }
        Ok(Self {
            scene,
            cameras,
            images,
            depths,
        })
    }
}
