//! Stage two: geometric distillation of the denoiser through the frozen decoder.

use std::path::Path;

use gsd_core::losses::{loss_2d_grad, loss_distill};
use gsd_core::metrics::{chamfer, sample_points};
use gsd_models::decoder::{decoder_forward_tape, init_decoder, raw_gradient};
use gsd_models::denoiser::{denoiser_forward_tape, gaussian_noise, init_denoiser, lora_targets, sample};
use gsd_models::{add_noise, decoder_forward, make_schedule};
use gsd_netkit::{attach_lora, AdamW, Layers, Lora, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_holdout, load_train, Sample};
use crate::error::{PipelineError, Result};
use crate::log::JsonlWriter;
use crate::objective::{background, scene_loss, scene_loss_grad};
use crate::train::{apply_step, pick_views, Grads};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillLogLine {
    pub step: usize,
    pub lr: f64,
    pub loss_distill: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_rgb: f64,
    pub loss_depth: f64,
    pub lambda_3d: f64,
    pub lambda_depth: f64,
    pub grad_norm: f64,
    pub objects: Vec<usize>,
    pub timesteps: Vec<usize>,
    /// Set on steps where the frozen checksums were re-verified.
    pub checksums_verified: bool,
}

/// Per-sample distillation losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistillTerms {
    pub l2d: f64,
    pub l3d: f64,
    pub rgb: f64,
    pub depth: f64,
    pub total: f64,
}

fn load_store(stem: &Path, what: &'static str, template: &ParamStore<f32>) -> Result<ParamStore<f32>> {
    let (bin, json) = gsd_netkit::params::checkpoint_paths(stem);
    for path in [json, bin] {
        if !path.exists() {
            return Err(PipelineError::Missing { what, path });
        }
    }
    let store = ParamStore::load(stem, 0)?;
    template.check_compatible(&store)?;
    Ok(store)
}

/// Trained decoder of `cfg`, frozen.
pub fn load_decoder(cfg: &RunConfig) -> Result<ParamStore<f32>> {
    let mut s = load_store(
        &cfg.decoder_ckpt(),
        "decoder checkpoint",
        &init_decoder(&cfg.decoder, cfg.decoder_seed)?,
    )?;
    s.freeze_all();
    Ok(s)
}

/// Pretrained base denoiser of `cfg`.
pub fn load_denoiser(cfg: &RunConfig) -> Result<ParamStore<f32>> {
    load_store(
        &cfg.denoiser_ckpt(),
        "denoiser checkpoint",
        &init_denoiser(&cfg.denoiser, cfg.denoiser_seed)?,
    )
}

/// Freshly initialized adapters (an exact no-op) on `denoiser`, which becomes frozen.
pub fn init_adapters(cfg: &RunConfig, denoiser: &mut ParamStore<f32>) -> Result<Lora<f32>> {
    Ok(attach_lora(denoiser, &lora_targets(&cfg.denoiser), cfg.lora, cfg.lora_seed)?)
}

/// Trained adapters saved by [`distill`]; `denoiser` becomes frozen.
pub fn load_adapters(cfg: &RunConfig, denoiser: &mut ParamStore<f32>) -> Result<Lora<f32>> {
    let fresh = init_adapters(cfg, denoiser)?;
    let store = load_store(&cfg.adapter_ckpt(), "adapter checkpoint", &fresh.store)?;
    Ok(Lora::from_store(cfg.lora, store)?)
}

/// Distillation loss and adapter gradients on one sample at timestep `t`.
#[allow(clippy::too_many_arguments)]
pub fn distill_sample_grad(
    cfg: &RunConfig,
    decoder: &ParamStore<f32>,
    denoiser: &ParamStore<f32>,
    lora: &Lora<f32>,
    sample: &Sample,
    t: usize,
    noise_seed: u64,
    views: &[usize],
) -> Result<(DistillTerms, Grads)> {
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let inputs = sample.denoiser_inputs(&cfg.denoiser)?;
    let z = &sample.latents;
    let z_t = add_noise(&schedule, z, t, &gaussian_noise(z, noise_seed))?;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::from_vec(z.views * z.tokens_per_view(), z.channels, z_t.data)?);
    let pred = denoiser_forward_tape(
        &mut tape,
        Layers::with_lora(denoiser, Some(lora)),
        &cfg.denoiser,
        &inputs,
        zv,
        t,
    )?;
    let pred_grid = z.with_data(tape.value(pred).data.clone())?;
    let (l2d, g2d) = loss_2d_grad(&pred_grid, z)?;
    let trace = decoder_forward_tape(
        &mut tape,
        decoder,
        &cfg.decoder,
        pred,
        (z.height, z.width),
        &sample.cond,
        &sample.input_cameras,
    )?;
    let (l3d, ggrads) = scene_loss_grad(&trace.scene, sample, views, &cfg.loss, background(&cfg.dataset))?;
    let raw_seed = raw_gradient(&tape, &cfg.decoder, &trace, &ggrads)?.scaled(cfg.loss.lambda_3d as f32);
    let (rows, cols) = tape.value(pred).shape();
    let seeds = [(pred, Tensor::from_vec(rows, cols, g2d)?), (trace.raw, raw_seed)];
    let grads = tape.backward(&seeds)?.for_store(&tape, &lora.store);
    let terms = DistillTerms {
        l2d: l2d as f64,
        l3d: l3d.total,
        rgb: l3d.rgb,
        depth: l3d.depth,
        total: loss_distill(l2d as f64, l3d.total, &cfg.loss),
    };
    Ok((terms, grads))
}

/// Held-out quality of sampled-then-decoded scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub objects: Vec<String>,
    pub loss_3d: Vec<f64>,
    pub chamfer: Vec<f64>,
    pub mean_loss_3d: f64,
    pub mean_chamfer: f64,
}

/// Sample latents for every held-out object, decode, render all views and
/// compare against ground truth.
pub fn evaluate_holdout(
    cfg: &RunConfig,
    decoder: &ParamStore<f32>,
    denoiser: &ParamStore<f32>,
    lora: Option<&Lora<f32>>,
    samples: &[Sample],
) -> Result<HoldoutReport> {
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let mut report = HoldoutReport {
        objects: Vec::new(),
        loss_3d: Vec::new(),
        chamfer: Vec::new(),
        mean_loss_3d: 0.0,
        mean_chamfer: 0.0,
    };
    for s in samples {
        let inputs = s.denoiser_inputs(&cfg.denoiser)?;
        let z0 = sample(
            denoiser,
            lora,
            &cfg.denoiser,
            &schedule,
            &inputs,
            cfg.eval.sample_steps,
            cfg.eval.sample_seed,
        )?;
        let scene = decoder_forward(decoder, &cfg.decoder, &z0, &s.cond, &s.input_cameras)?;
        let views: Vec<usize> = (0..s.views()).collect();
        let l3d = scene_loss(&scene, s, &views, &cfg.loss, background(&cfg.dataset))?;
        let pred = sample_points(&scene, cfg.eval.points, cfg.eval.point_seed)?;
        let gt = sample_points(&s.data.scene.cast::<f32>(), cfg.eval.points, cfg.eval.point_seed)?;
        report.objects.push(s.id.clone());
        report.loss_3d.push(l3d.total);
        report.chamfer.push(chamfer(&pred, &gt)? as f64);
    }
    let n = report.objects.len().max(1) as f64;
    report.mean_loss_3d = report.loss_3d.iter().sum::<f64>() / n;
    report.mean_chamfer = report.chamfer.iter().sum::<f64>() / n;
    Ok(report)
}

/// Held-out report before and after distillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub initial: HoldoutReport,
    pub distilled: HoldoutReport,
    pub decoder_checksum: String,
    pub denoiser_checksum: String,
}

#[derive(Clone, Debug)]
pub struct DistillReport {
    pub lora: Lora<f32>,
    pub summary: DistillSummary,
}

fn verify(store: &ParamStore<f32>, expected: &str, step: usize) -> Result<()> {
    if store.checksum(true) != expected {
        return Err(PipelineError::FrozenChanged {
            stage: "distill",
            step,
            store: store.id.clone(),
        });
    }
    Ok(())
}

/// Train LoRA adapters on the denoiser with `L_2D + λ_3D · L_3D`; the
/// decoder and the base denoiser stay frozen and are checksummed.
pub fn distill(cfg: &RunConfig) -> Result<DistillReport> {
    cfg.validate()?;
    let decoder = load_decoder(cfg)?;
    let mut denoiser = load_denoiser(cfg)?;
    let mut lora = init_adapters(cfg, &mut denoiser)?;
    let dec_sum = decoder.checksum(true);
    let den_sum = denoiser.checksum(true);
    let samples = load_train(cfg)?;
    let holdout = load_holdout(cfg)?;
    let initial = evaluate_holdout(cfg, &decoder, &denoiser, Some(&lora), &holdout)?;
    let stage = &cfg.stage_two;
    let mut opt = AdamW::new(stage.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(stage.seed);
    cfg.echo()?;
    let mut log = JsonlWriter::create(&cfg.out_dir.join("distill_log.jsonl"))?;
    for step in 0..stage.steps {
        let picks: Vec<(usize, usize, u64, Vec<usize>)> = (0..stage.batch)
            .map(|_| {
                let o = rng.random_range(0..samples.len());
                let t = rng.random_range(1..=cfg.diffusion_steps);
                let seed = rng.random();
                (o, t, seed, pick_views(&mut rng, samples[o].views(), stage.render_views))
            })
            .collect();
        let mut terms = Vec::new();
        let mut grads = Vec::new();
        for (o, t, seed, views) in &picks {
            let (d, g) = distill_sample_grad(cfg, &decoder, &denoiser, &lora, &samples[*o], *t, *seed, views)?;
            if !d.total.is_finite() {
                return Err(PipelineError::NonFinite {
                    stage: "distill",
                    step,
                    what: format!("loss on {}", samples[*o].id),
                });
            }
            terms.push(d);
            grads.push(g);
        }
        let norm = apply_step(&mut opt, &mut lora.store, stage, step, grads, "distill")?;
        let check = (step + 1) % cfg.checksum_every == 0 || step + 1 == stage.steps;
        if check {
            verify(&decoder, &dec_sum, step)?;
            verify(&denoiser, &den_sum, step)?;
        }
        let n = terms.len() as f64;
        let mean = |f: fn(&DistillTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
        log.write(&DistillLogLine {
            step,
            lr: stage.lr_at(step),
            loss_distill: mean(|d| d.total),
            loss_2d: mean(|d| d.l2d),
            loss_3d: mean(|d| d.l3d),
            loss_rgb: mean(|d| d.rgb),
            loss_depth: mean(|d| d.depth),
            lambda_3d: cfg.loss.lambda_3d,
            lambda_depth: cfg.loss.lambda_depth,
            grad_norm: norm,
            objects: picks.iter().map(|p| p.0).collect(),
            timesteps: picks.iter().map(|p| p.1).collect(),
            checksums_verified: check,
        })?;
    }
    log.finish()?;
    lora.store.save(&cfg.adapter_ckpt())?;
    let distilled = evaluate_holdout(cfg, &decoder, &denoiser, Some(&lora), &holdout)?;
    let summary = DistillSummary {
        initial,
        distilled,
        decoder_checksum: dec_sum,
        denoiser_checksum: den_sum,
    };
    gsd_core::dataset::write_json(&cfg.out_dir.join("distill_summary.json"), &summary)?;
    Ok(DistillReport { lora, summary })
}
