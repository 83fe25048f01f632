//! Loading rendered objects and the per-object inputs both networks consume.

use std::path::Path;

use gsd_core::camera::{select_input_views, Camera};
use gsd_core::codec::{encode_views, LatentGrid};
use gsd_core::dataset::{DatasetManifest, ObjectData};
use gsd_models::denoiser::DenoiserInputs;
use gsd_models::{ConditionEncoder, DenoiserConfig, FeatureTokens};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};

/// One object with everything precomputed that does not change in training.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub data: ObjectData,
    pub masks: Vec<Vec<bool>>,
    pub input_views: Vec<usize>,
    pub input_cameras: Vec<Camera<f32>>,
    /// Latents of the input views.
    pub latents: LatentGrid<f32>,
    /// Features of the conditioning image (the first input view).
    pub cond: FeatureTokens<f32>,
}

impl Sample {
    pub fn views(&self) -> usize {
        self.data.images.len()
    }

    pub fn conditioning_image(&self) -> &gsd_core::image::ImageBuffer<f32> {
        &self.data.images[self.input_views[0]]
    }

    pub fn denoiser_inputs(&self, cfg: &DenoiserConfig) -> Result<DenoiserInputs<f32>> {
        Ok(DenoiserInputs::new(
            cfg,
            self.conditioning_image(),
            &self.cond,
            &self.input_cameras,
        )?)
    }
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = DatasetManifest::path(dir);
    if !path.exists() {
        return Err(PipelineError::Missing {
            what: "dataset manifest",
            path,
        });
    }
    Ok(DatasetManifest::load(dir)?)
}

/// Load objects `range` of the dataset in `dir` with `cfg.dataset.input_views` inputs.
pub fn load_samples(cfg: &RunConfig, dir: &Path, range: std::ops::Range<usize>) -> Result<Vec<Sample>> {
    let manifest = load_manifest(dir)?;
    let entries = manifest.objects.get(range.clone()).ok_or_else(|| {
        PipelineError::Usage(format!(
            "objects {range:?} requested but {} has {}",
            dir.display(),
            manifest.objects.len()
        ))
    })?;
    let encoder = ConditionEncoder::<f32>::new(cfg.condition)?;
    entries
        .par_iter()
        .map(|e| {
            let data = ObjectData::load(dir, e)?;
            let input_views = select_input_views(data.images.len(), cfg.dataset.input_views)?;
            let inputs: Vec<_> = input_views.iter().map(|&v| data.images[v].clone()).collect();
            let latents = encode_views(&inputs, cfg.decoder.patch)?;
            let cond = encoder.extract(&inputs[0])?;
            Ok(Sample {
                id: e.id.clone(),
                masks: data.depths.iter().map(|d| d.coverage_mask()).collect(),
                input_cameras: input_views.iter().map(|&v| data.cameras[v].clone()).collect(),
                input_views,
                latents,
                cond,
                data,
            })
        })
        .collect()
}

/// Objects the training stages see.
pub fn load_train(cfg: &RunConfig) -> Result<Vec<Sample>> {
    load_samples(cfg, &cfg.data_dir(), 0..cfg.train_objects())
}

/// Objects excluded from training.
pub fn load_holdout(cfg: &RunConfig) -> Result<Vec<Sample>> {
    load_samples(cfg, &cfg.data_dir(), cfg.train_objects()..cfg.dataset.object_count)
}
