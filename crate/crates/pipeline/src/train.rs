//! Stage one (decoder reconstruction) and base denoiser pretraining.

use std::collections::BTreeMap;

use gsd_core::losses::loss_2d_grad;
use gsd_models::decoder::{decoder_forward_tape, raw_gradient};
use gsd_models::denoiser::{denoiser_forward_tape, gaussian_noise, init_denoiser};
use gsd_models::{add_noise, init_decoder, make_schedule};
use gsd_netkit::{AdamW, Layers, ParamStore, Tape, Tensor};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StageConfig};
use crate::data::{load_train, Sample};
use crate::error::{PipelineError, Result};
use crate::log::JsonlWriter;
use crate::objective::{background, scene_loss_grad, LossTerms};

pub type Grads = BTreeMap<String, Tensor<f32>>;

/// One line of the stage-one log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderLogLine {
    pub step: usize,
    pub lr: f64,
    pub loss_3d: f64,
    pub loss_rgb: f64,
    pub loss_depth: f64,
    pub lambda_depth: f64,
    pub grad_norm: f64,
    pub objects: Vec<usize>,
    pub views: Vec<Vec<usize>>,
}

/// One line of the denoiser pretraining log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserLogLine {
    pub step: usize,
    pub lr: f64,
    pub loss_2d: f64,
    pub grad_norm: f64,
    pub objects: Vec<usize>,
    pub timesteps: Vec<usize>,
}

pub fn grad_norm(grads: &Grads) -> f64 {
    grads
        .values()
        .flat_map(|t| &t.data)
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Average per-sample gradients, clip, and take one optimizer step.
pub(crate) fn apply_step(
    opt: &mut AdamW<f32>,
    store: &mut ParamStore<f32>,
    stage: &StageConfig,
    step: usize,
    per_sample: Vec<Grads>,
    what: &'static str,
) -> Result<f64> {
    let inv = 1.0 / per_sample.len() as f32;
    let mut iter = per_sample.into_iter();
    let mut total = iter.next().unwrap_or_default();
    for g in iter {
        for (name, t) in g {
            match total.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    total.insert(name, t);
                }
            }
        }
    }
    for t in total.values_mut() {
        *t = t.scaled(inv);
    }
    let norm = grad_norm(&total);
    if !norm.is_finite() {
        return Err(PipelineError::NonFinite {
            stage: what,
            step,
            what: "gradient".into(),
        });
    }
    if let Some(clip) = stage.grad_clip {
        if norm > clip {
            let s = (clip / norm) as f32;
            for t in total.values_mut() {
                *t = t.scaled(s);
            }
        }
    }
    opt.cfg.lr = stage.lr_at(step);
    opt.step(store, &total)?;
    Ok(norm)
}

/// Views supervising one sample: all of them or a seeded subset.
pub(crate) fn pick_views(rng: &mut ChaCha8Rng, total: usize, count: Option<usize>) -> Vec<usize> {
    match count {
        Some(k) if k < total => {
            let mut v = sample_indices(rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    }
}

/// Loss and parameter gradients of the decoder on one sample.
pub fn decoder_sample_grad(
    params: &ParamStore<f32>,
    cfg: &RunConfig,
    sample: &Sample,
    views: &[usize],
) -> Result<(LossTerms, Grads)> {
    let z = &sample.latents;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::from_vec(
        z.views * z.tokens_per_view(),
        z.channels,
        z.data.clone(),
    )?);
    let trace = decoder_forward_tape(
        &mut tape,
        params,
        &cfg.decoder,
        zv,
        (z.height, z.width),
        &sample.cond,
        &sample.input_cameras,
    )?;
    let (terms, ggrads) = scene_loss_grad(&trace.scene, sample, views, &cfg.loss, background(&cfg.dataset))?;
    let seed = raw_gradient(&tape, &cfg.decoder, &trace, &ggrads)?;
    let grads = tape.backward(&[(trace.raw, seed)])?.for_store(&tape, params);
    Ok((terms, grads))
}

/// Outcome of a training stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub params: ParamStore<f32>,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Stage one: train the decoder to reconstruct every ground-truth view.
pub fn train_decoder(cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    let samples = load_train(cfg)?;
    let stage = &cfg.stage_one;
    let mut params = init_decoder::<f32>(&cfg.decoder, cfg.decoder_seed)?;
    let mut opt = AdamW::new(stage.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(stage.seed);
    cfg.echo()?;
    let mut log = JsonlWriter::create(&cfg.out_dir.join("decoder_log.jsonl"))?;
    let (mut first, mut last) = (f64::NAN, f64::NAN);
    for step in 0..stage.steps {
        let picks: Vec<(usize, Vec<usize>)> = (0..stage.batch)
            .map(|_| {
                let o = rng.random_range(0..samples.len());
                let views = pick_views(&mut rng, samples[o].views(), stage.render_views);
                (o, views)
            })
            .collect();
        let mut terms = Vec::new();
        let mut grads = Vec::new();
        for (o, views) in &picks {
            let (t, g) = decoder_sample_grad(&params, cfg, &samples[*o], views)?;
            if !t.is_finite() {
                return Err(PipelineError::NonFinite {
                    stage: "decoder",
                    step,
                    what: format!("loss on {}", samples[*o].id),
                });
            }
            terms.push(t);
            grads.push(g);
        }
        let mean = LossTerms::mean(&terms);
        let norm = apply_step(&mut opt, &mut params, stage, step, grads, "decoder")?;
        if step == 0 {
            first = mean.total;
        }
        last = mean.total;
        log.write(&DecoderLogLine {
            step,
            lr: stage.lr_at(step),
            loss_3d: mean.total,
            loss_rgb: mean.rgb,
            loss_depth: mean.depth,
            lambda_depth: cfg.loss.lambda_depth,
            grad_norm: norm,
            objects: picks.iter().map(|p| p.0).collect(),
            views: picks.into_iter().map(|p| p.1).collect(),
        })?;
    }
    log.finish()?;
    params.save(&cfg.decoder_ckpt())?;
    Ok(StageReport {
        params,
        first_loss: first,
        last_loss: last,
    })
}

/// Clean-latent regression loss and gradients of the denoiser on one sample.
pub fn denoiser_sample_grad(
    params: &ParamStore<f32>,
    cfg: &RunConfig,
    sample: &Sample,
    t: usize,
    noise_seed: u64,
) -> Result<(f64, Grads)> {
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let inputs = sample.denoiser_inputs(&cfg.denoiser)?;
    let z = &sample.latents;
    let eps = gaussian_noise(z, noise_seed);
    let z_t = add_noise(&schedule, z, t, &eps)?;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::from_vec(z.views * z.tokens_per_view(), z.channels, z_t.data)?);
    let out = denoiser_forward_tape(&mut tape, Layers::new(params), &cfg.denoiser, &inputs, zv, t)?;
    let pred = z.with_data(tape.value(out).data.clone())?;
    let (loss, g) = loss_2d_grad(&pred, z)?;
    let (rows, cols) = tape.value(out).shape();
    let seed = Tensor::from_vec(rows, cols, g)?;
    let grads = tape.backward(&[(out, seed)])?.for_store(&tape, params);
    Ok((loss as f64, grads))
}

/// Pretrain the base denoiser on clean-latent regression at uniform timesteps.
pub fn train_denoiser(cfg: &RunConfig) -> Result<StageReport> {
    cfg.validate()?;
    let samples = load_train(cfg)?;
    let stage = &cfg.denoiser_pretrain;
    let mut params = init_denoiser::<f32>(&cfg.denoiser, cfg.denoiser_seed)?;
    let mut opt = AdamW::new(stage.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(stage.seed);
    cfg.echo()?;
    let mut log = JsonlWriter::create(&cfg.out_dir.join("denoiser_log.jsonl"))?;
    let (mut first, mut last) = (f64::NAN, f64::NAN);
    for step in 0..stage.steps {
        let picks: Vec<(usize, usize, u64)> = (0..stage.batch)
            .map(|_| {
                (
                    rng.random_range(0..samples.len()),
                    rng.random_range(1..=cfg.diffusion_steps),
                    rng.random(),
                )
            })
            .collect();
        let mut losses = Vec::new();
        let mut grads = Vec::new();
        for &(o, t, seed) in &picks {
            let (l, g) = denoiser_sample_grad(&params, cfg, &samples[o], t, seed)?;
            if !l.is_finite() {
                return Err(PipelineError::NonFinite {
                    stage: "denoiser",
                    step,
                    what: format!("loss on {}", samples[o].id),
                });
            }
            losses.push(l);
            grads.push(g);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let norm = apply_step(&mut opt, &mut params, stage, step, grads, "denoiser")?;
        if step == 0 {
            first = mean;
        }
        last = mean;
        log.write(&DenoiserLogLine {
            step,
            lr: stage.lr_at(step),
            loss_2d: mean,
            grad_norm: norm,
            objects: picks.iter().map(|p| p.0).collect(),
            timesteps: picks.iter().map(|p| p.1).collect(),
        })?;
    }
    log.finish()?;
    params.save(&cfg.denoiser_ckpt())?;
    Ok(StageReport {
        params,
        first_loss: first,
        last_loss: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_subsets_are_sorted_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = pick_views(&mut rng, 84, Some(5));
        assert_eq!(v.len(), 5);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(pick_views(&mut rng, 6, None), (0..6).collect::<Vec<_>>());
        assert_eq!(pick_views(&mut rng, 6, Some(9)).len(), 6);
    }

    #[test]
    fn gradient_norm() {
        let mut g = Grads::new();
        g.insert("a".into(), Tensor::from_vec(1, 2, vec![3.0, 0.0]).unwrap());
        g.insert("b".into(), Tensor::from_vec(1, 1, vec![4.0]).unwrap());
        assert_eq!(grad_norm(&g), 5.0);
    }
}
