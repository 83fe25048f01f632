//! Held-out evaluation on an evaluation set: image metrics at the held-out
//! views and point-cloud metrics against the ground-truth object.

use gsd_core::dataset::{DatasetManifest, ObjectData};
use gsd_core::gaussian::GaussianScene;
use gsd_core::metrics::{chamfer, fscore, iou_voxel, psnr, sample_points, ssim, Bounds};
use gsd_core::raster::render;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::load_manifest;
use crate::error::{PipelineError, Result};
use crate::infer::{frame_cameras, infer_scene, Models};
use crate::objective::background;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub chamfer: f64,
    pub iou: f64,
    pub fscore: f64,
    pub views: Vec<ViewMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: String,
    pub points: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub chamfer: f64,
    pub iou: f64,
    pub fscore: f64,
    pub objects: Vec<ObjectMetrics>,
}

/// Where the evaluated scenes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneSource {
    /// Inference from the conditioning view with the trained models.
    Model { adapters: bool },
    /// The ground-truth scenes themselves (a self-check of the harness).
    GroundTruth,
}

/// Metrics of `scene` against one evaluation object.
pub fn evaluate_scene(cfg: &RunConfig, scene: &GaussianScene<f32>, gt: &ObjectData, held_out: &[usize], id: &str) -> Result<ObjectMetrics> {
    let bg = background(&cfg.dataset);
    let mut views = Vec::new();
    for &v in held_out {
        let cam = gt
            .cameras
            .get(v)
            .ok_or_else(|| PipelineError::Usage(format!("{id} has no view {v}")))?;
        let out = render(scene, cam, bg)?;
        views.push(ViewMetrics {
            view: v,
            psnr: psnr(&out.image, &gt.images[v])?,
            ssim: ssim(&out.image, &gt.images[v])?,
        });
    }
    let e = &cfg.eval;
    let pred = sample_points(scene, e.points, e.point_seed)?;
    let truth = sample_points(&gt.scene.cast::<f32>(), e.points, e.point_seed)?;
    let bounds = Bounds::cube(e.iou_half_extent as f32);
    let n = views.len().max(1) as f64;
    Ok(ObjectMetrics {
        id: id.to_string(),
        psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        chamfer: chamfer(&pred, &truth)? as f64,
        iou: iou_voxel(&pred, &truth, e.iou_resolution, &bounds)? as f64,
        fscore: fscore(&pred, &truth, e.fscore_tau as f32)? as f64,
        views,
    })
}

/// Evaluate every object of the evaluation set of `cfg`.
pub fn evaluate(cfg: &RunConfig, source: SceneSource) -> Result<MetricsReport> {
    cfg.validate()?;
    let dir = cfg.eval_dir();
    let manifest: DatasetManifest = load_manifest(&dir)?;
    let models = match source {
        SceneSource::Model { adapters } => Some(Models::load(cfg, adapters)?),
        SceneSource::GroundTruth => None,
    };
    let mut objects = Vec::new();
    for entry in &manifest.objects {
        let gt = ObjectData::load(&dir, entry)?;
        let scene = match &models {
            Some(m) => {
                let cams = frame_cameras(cfg, entry.elevation_deg)?;
                let image = &gt.images[entry.conditioning_view];
                infer_scene(cfg, m, image, &cams, cfg.eval.sample_steps, cfg.eval.sample_seed)?
            }
            None => gt.scene.cast::<f32>(),
        };
        objects.push(evaluate_scene(cfg, &scene, &gt, &entry.eval_views, &entry.id)?);
    }
    let n = objects.len().max(1) as f64;
    let mean = |f: fn(&ObjectMetrics) -> f64| objects.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        source: match source {
            SceneSource::Model { adapters: true } => "distilled".into(),
            SceneSource::Model { adapters: false } => "base".into(),
            SceneSource::GroundTruth => "ground_truth".into(),
        },
        points: cfg.eval.points,
        psnr: mean(|o| o.psnr),
        ssim: mean(|o| o.ssim),
        chamfer: mean(|o| o.chamfer),
        iou: mean(|o| o.iou),
        fscore: mean(|o| o.fscore),
        objects,
    })
}
