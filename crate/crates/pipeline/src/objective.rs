//! Rendering a predicted scene against ground-truth views.

use gsd_core::gaussian::GaussianScene;
use gsd_core::image::{DepthBuffer, ImageBuffer};
use gsd_core::losses::{depth_loss_grad, loss_3d, rgb_loss_grad, LossConfig};
use gsd_core::raster::{render, render_backward, GaussianGrad, RenderOutput};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub depth: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(rgb: f32, depth: f32, cfg: &LossConfig) -> Self {
        Self {
            rgb: rgb as f64,
            depth: depth as f64,
            total: loss_3d(rgb as f64, depth as f64, cfg),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rgb.is_finite() && self.depth.is_finite() && self.total.is_finite()
    }

    /// Mean of several terms.
    pub fn mean(terms: &[LossTerms]) -> Self {
        let n = terms.len().max(1) as f64;
        let sum = |f: fn(&LossTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        Self {
            rgb: sum(|t| t.rgb),
            depth: sum(|t| t.depth),
            total: sum(|t| t.total),
        }
    }
}

pub fn render_views(
    scene: &GaussianScene<f32>,
    sample: &Sample,
    views: &[usize],
    background: [f32; 3],
) -> Result<Vec<RenderOutput<f32>>> {
    Ok(views
        .par_iter()
        .map(|&v| render(scene, &sample.data.cameras[v], background))
        .collect::<gsd_core::Result<Vec<_>>>()?)
}

type Targets = (Vec<ImageBuffer<f32>>, Vec<DepthBuffer<f32>>, Vec<Vec<bool>>);

fn targets(sample: &Sample, views: &[usize]) -> Targets {
    (
        views.iter().map(|&v| sample.data.images[v].clone()).collect(),
        views.iter().map(|&v| sample.data.depths[v].clone()).collect(),
        views.iter().map(|&v| sample.masks[v].clone()).collect(),
    )
}

/// Reconstruction loss of `scene` over `views` of the sample.
pub fn scene_loss(
    scene: &GaussianScene<f32>,
    sample: &Sample,
    views: &[usize],
    cfg: &LossConfig,
    background: [f32; 3],
) -> Result<LossTerms> {
    let outs = render_views(scene, sample, views, background)?;
    let (images, depths, masks) = targets(sample, views);
    let rendered: Vec<_> = outs.iter().map(|o| o.image.clone()).collect();
    let rendered_depth: Vec<_> = outs.iter().map(|o| o.depth.clone()).collect();
    let (rgb, _) = rgb_loss_grad(&rendered, &images)?;
    let (depth, _) = depth_loss_grad(&rendered_depth, &depths, &masks)?;
    Ok(LossTerms::new(rgb, depth, cfg))
}

/// [`scene_loss`] plus its gradient with respect to every Gaussian.
pub fn scene_loss_grad(
    scene: &GaussianScene<f32>,
    sample: &Sample,
    views: &[usize],
    cfg: &LossConfig,
    background: [f32; 3],
) -> Result<(LossTerms, Vec<GaussianGrad<f32>>)> {
    let outs = render_views(scene, sample, views, background)?;
    let (images, depths, masks) = targets(sample, views);
    let rendered: Vec<_> = outs.iter().map(|o| o.image.clone()).collect();
    let rendered_depth: Vec<_> = outs.iter().map(|o| o.depth.clone()).collect();
    let (rgb, d_rgb) = rgb_loss_grad(&rendered, &images)?;
    let (depth, d_depth) = depth_loss_grad(&rendered_depth, &depths, &masks)?;
    let lambda = cfg.lambda_depth as f32;
    let per_view = views
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let dd: Vec<f32> = d_depth[k].iter().map(|&g| lambda * g).collect();
            render_backward(scene, &sample.data.cameras[v], &outs[k], &d_rgb[k], &dd)
        })
        .collect::<gsd_core::Result<Vec<_>>>()?;
    let mut grads = vec![GaussianGrad::zero(); scene.len()];
    for g in &per_view {
        for (a, b) in grads.iter_mut().zip(g) {
            a.add_assign(b);
        }
    }
    Ok((LossTerms::new(rgb, depth, cfg), grads))
}

pub fn background(cfg: &gsd_core::dataset::DatasetConfig) -> [f32; 3] {
    cfg.background.map(|c| c as f32)
}
