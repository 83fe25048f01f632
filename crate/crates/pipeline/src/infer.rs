//! Single-image inference: sample multi-view latents, decode, render.

use std::fs;
use std::path::Path;

use gsd_core::camera::{make_orbit_cameras, Camera};
use gsd_core::dataset::{read_png, write_json, write_rgba_png};
use gsd_core::gaussian::GaussianScene;
use gsd_core::image::ImageBuffer;
use gsd_core::ply::export_ply;
use gsd_core::raster::render;
use gsd_core::Error;
use gsd_models::denoiser::{sample, DenoiserInputs};
use gsd_models::{decoder_forward, make_schedule, ConditionEncoder};
use gsd_netkit::{Lora, ParamStore};

use crate::config::RunConfig;
use crate::distill::{load_adapters, load_decoder, load_denoiser};
use crate::error::Result;
use crate::objective::background;

/// Trained networks needed for inference.
#[derive(Clone, Debug)]
pub struct Models {
    pub decoder: ParamStore<f32>,
    pub denoiser: ParamStore<f32>,
    pub lora: Option<Lora<f32>>,
}

impl Models {
    /// Load the checkpoints of `cfg`; adapters are optional.
    pub fn load(cfg: &RunConfig, adapters: bool) -> Result<Self> {
        let decoder = load_decoder(cfg)?;
        let mut denoiser = load_denoiser(cfg)?;
        let lora = if adapters {
            Some(load_adapters(cfg, &mut denoiser)?)
        } else {
            None
        };
        Ok(Self {
            decoder,
            denoiser,
            lora,
        })
    }
}

/// The generated frames' cameras: an orbit of `N` views starting at the
/// conditioning image's viewpoint.
pub fn frame_cameras(cfg: &RunConfig, elevation_deg: f64) -> Result<Vec<Camera<f32>>> {
    let d = &cfg.dataset;
    Ok(make_orbit_cameras(
        cfg.decoder.views,
        elevation_deg.to_radians() as f32,
        d.radius as f32,
        d.focal() as f32,
        d.resolution,
        d.resolution,
    )?)
}

/// Reconstruct a scene from one conditioning image.
pub fn infer_scene(
    cfg: &RunConfig,
    models: &Models,
    image: &ImageBuffer<f32>,
    cameras: &[Camera<f32>],
    steps: usize,
    seed: u64,
) -> Result<GaussianScene<f32>> {
    let res = cfg.dataset.resolution;
    if (image.height, image.width) != (res, res) {
        return Err(Error::Shape(format!(
            "image is {}x{}, the models expect {res}x{res}",
            image.height, image.width
        ))
        .into());
    }
    let cond = ConditionEncoder::<f32>::new(cfg.condition)?.extract(image)?;
    let inputs = DenoiserInputs::new(&cfg.denoiser, image, &cond, cameras)?;
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let z0 = sample(
        &models.denoiser,
        models.lora.as_ref(),
        &cfg.denoiser,
        &schedule,
        &inputs,
        steps,
        seed,
    )?;
    Ok(decoder_forward(&models.decoder, &cfg.decoder, &z0, &cond, cameras)?)
}

/// Reconstruct from an image file and write `scene.ply`, `scene.json` and
/// one render per frame camera into `out`.
pub fn run_infer(
    cfg: &RunConfig,
    models: &Models,
    image_path: &Path,
    elevation_deg: f64,
    steps: usize,
    seed: u64,
    out: &Path,
) -> Result<GaussianScene<f32>> {
    let (image, _) = read_png(image_path)?;
    let cams = frame_cameras(cfg, elevation_deg)?;
    let scene = infer_scene(cfg, models, &image, &cams, steps, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    export_ply(&scene, &out.join("scene.ply"))?;
    write_json(&out.join("scene.json"), &scene)?;
    for (v, cam) in cams.iter().enumerate() {
        let r = render(&scene, cam, background(&cfg.dataset))?;
        write_rgba_png(&out.join(format!("view_{v:02}.png")), &r.image.cast::<f64>(), &r.depth.alpha.iter().map(|&a| a as f64).collect::<Vec<_>>())?;
    }
    Ok(scene)
}
