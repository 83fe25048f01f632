//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass a criterion number to run only that
//! one, e.g. `cargo test --test acceptance -- 4`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use gsd_core::camera::{focal_from_fov, make_orbit_cameras, select_input_views, Camera};
use gsd_core::codec::{decode_latents, encode_views, LatentGrid};
use gsd_core::dataset::DatasetManifest;
use gsd_core::image::{dequantize_u8, DepthBuffer, ImageBuffer};
use gsd_core::losses::{depth_loss, depth_loss_grad, loss_2d, loss_3d, loss_distill, rgb_loss, rgb_loss_grad, LossConfig};
use gsd_core::metrics::{
    chamfer, fscore, iou_voxel, nearest_brute, psnr, sample_points, ssim, Bounds, KdTree, PointCloud, PSNR_CAP,
};
use gsd_core::raster::{render, render_backward, render_reference, GaussianGrad};
use gsd_core::scenes::{gen_object, random_scene, OBJECT_RADIUS};
use gsd_models::decoder::{decoder_forward_tape, init_decoder, raw_gradient};
use gsd_models::denoiser::{denoiser_forward, gaussian_noise, DenoiserInputs};
use gsd_models::{add_noise, make_schedule, ConditionConfig, ConditionEncoder, DecoderConfig, FeatureTokens};
use gsd_netkit::{merge_lora, Lora, ParamStore, Tape, Tensor};
use gsd_pipeline::data::load_train;
use gsd_pipeline::distill::{init_adapters, load_adapters, load_decoder, load_denoiser, DistillSummary};
use gsd_pipeline::eval::{evaluate, SceneSource};
use gsd_pipeline::objective::render_views;
use gsd_pipeline::{distill, gen_data, train_decoder, train_denoiser, RunConfig};
use rand::{Rng, SeedableRng};

mod common;
use common::micro_config;
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets, one per criterion.
const ORACLE_TOL: f64 = 1e-5;
const ORACLE_BUDGET_S: f64 = 120.0;
const FD_STEP: f64 = 1e-4;
/// Decoder-level step; see the end-to-end check for why it is smaller.
const FD_STEP_DECODER: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-3;
const LOSS_TOL: f64 = 1e-12;
const OVERFIT_PSNR_DB: f64 = 28.0;
const OVERFIT_DEPTH_FRACTION: f64 = 0.02;
const OVERFIT_BUDGET_S: f64 = 30.0 * 60.0;
const MERGE_TOL: f64 = 1e-6;
const ALPHA_BAR_T_MAX: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// 1. Tiled renderer vs reference renderer.
fn rasterizer_oracle() -> Outcome {
    let start = Instant::now();
    let cams = make_orbit_cameras::<f64>(5, 0.35, 3.0, focal_from_fov(45.0, 64), 64, 64).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let count = 1 + (seed as usize * 37) % 256;
        let scene = random_scene(1000 + seed, count);
        let cam = &cams[seed as usize % cams.len()];
        let bg = [0.2, 0.5, 1.0];
        let a = render(&scene, cam, bg).unwrap();
        let b = render_reference(&scene, cam, bg).unwrap();
        let px = a.image.pixels.iter().zip(&b.image.pixels);
        let dp = a.depth.depth.iter().zip(&b.depth.depth);
        for (x, y) in px.chain(dp) {
            worst = worst.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= ORACLE_TOL && secs < ORACLE_BUDGET_S,
        format!("max |tiled - reference| = {worst:.2e} (tol {ORACLE_TOL:.0e}) in {secs:.1}s (budget {ORACLE_BUDGET_S}s)"),
    )
}

const GROUPS: [(&str, std::ops::Range<usize>); 5] = [
    ("mean", 0..3),
    ("log_scale", 3..6),
    ("rotation", 6..10),
    ("opacity_logit", 10..11),
    ("color", 11..14),
];

fn perturb(scene: &gsd_core::gaussian::GaussianScene<f64>, gi: usize, k: usize, delta: f64) -> gsd_core::gaussian::GaussianScene<f64> {
    let mut s = scene.clone();
    let g = &mut s.gaussians[gi];
    match k {
        0..=2 => g.mean[k] += delta,
        3..=5 => g.log_scale[k - 3] += delta,
        6..=9 => g.rotation[k - 6] += delta,
        10 => g.opacity_logit += delta,
        _ => g.color[k - 11] += delta,
    }
    s
}

fn relative(analytic: &[f64], fd: &[f64]) -> Option<f64> {
    let diff = analytic.iter().zip(fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let s = scale(analytic).max(scale(fd));
    // A group whose true gradient vanishes is compared absolutely.
    if s < 1e-9 {
        return (diff < 1e-9).then_some(0.0);
    }
    Some(diff / s)
}

/// Worst per-group relative error over 20 scenes for one upstream kind.
fn rasterizer_gradient_error(depth_upstream: bool) -> (f64, &'static str) {
    let cam = Camera::orbit(0.7, 0.2, 3.0, focal_from_fov(45.0, 16), 16, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(if depth_upstream { 21 } else { 20 });
    let mut worst = (0.0f64, "none");
    for seed in 0..20u64 {
        let scene = random_scene(7000 + seed, 1 + (seed as usize % 8));
        let wi: Vec<f64> = (0..768)
            .map(|_| if depth_upstream { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let wd: Vec<f64> = (0..256)
            .map(|_| if depth_upstream { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let loss = |s: &gsd_core::gaussian::GaussianScene<f64>| {
            let o = render(s, &cam, [1.0; 3]).unwrap();
            o.image.pixels.iter().zip(&wi).map(|(a, b)| a * b).sum::<f64>()
                + o.depth.depth.iter().zip(&wd).map(|(a, b)| a * b).sum::<f64>()
        };
        let out = render(&scene, &cam, [1.0; 3]).unwrap();
        let grads = render_backward(&scene, &cam, &out, &wi, &wd).unwrap();
        for (name, range) in GROUPS {
            let mut an = Vec::new();
            let mut fd = Vec::new();
            for (gi, g) in grads.iter().enumerate() {
                let arr = g.to_array();
                for k in range.clone() {
                    an.push(arr[k]);
                    let up = loss(&perturb(&scene, gi, k, FD_STEP));
                    let down = loss(&perturb(&scene, gi, k, -FD_STEP));
                    fd.push((up - down) / (2.0 * FD_STEP));
                }
            }
            let err = relative(&an, &fd).unwrap_or(f64::INFINITY);
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    worst
}

/// End-to-end check through a 2-layer decoder: loss of its decoded scene
/// rendered at three cameras, differentiated with respect to every weight.
fn decoder_gradient_error() -> (f64, String) {
    let cfg = DecoderConfig {
        layers: 2,
        width: 4,
        heads: 2,
        upsample: 2,
        patch: 1,
        views: 1,
        pose_freqs: 2,
        cond_dim: 8,
        init_log_scale: 0.15f64.ln(),
        ..DecoderConfig::default()
    };
    let mut params = init_decoder::<f64>(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let names: Vec<String> = params.names().cloned().collect();
    for n in &names {
        for v in &mut params.tensor_mut(n).unwrap().data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    // Translucent splats keep transmittance far from the termination threshold.
    params.tensor_mut("head.b").unwrap().data[8] = -2.5;
    let size = 8;
    let orbit = |n| make_orbit_cameras::<f64>(n, 0.3, 3.0, focal_from_fov(45.0, size), size, size).unwrap();
    let input = orbit(1);
    let cams: Vec<_> = input.iter().chain(&orbit(3)[..2]).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = LatentGrid::<f64>::zeros(1, size, size, 1).unwrap();
    let z = z.with_data((0..z.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let px = (0..size * size * 3)
        .map(|i| (((i as u32).wrapping_mul(2654435761) ^ 4) % 997) as f64 / 996.0)
        .collect();
    let cond: FeatureTokens<f64> = ConditionEncoder::new(ConditionConfig { patch: 2, dim: 8, seed: 9 })
        .unwrap()
        .extract(&ImageBuffer::from_pixels(size, size, px).unwrap())
        .unwrap();
    let gt = gen_object(3);
    let targets: Vec<_> = cams.iter().map(|c| render(&gt, c, [1.0; 3]).unwrap()).collect();
    let gt_im: Vec<_> = targets.iter().map(|t| t.image.clone()).collect();
    let gt_d: Vec<DepthBuffer<f64>> = targets.iter().map(|t| t.depth.clone()).collect();
    let masks: Vec<_> = gt_d.iter().map(|d| d.coverage_mask()).collect();
    let eval = |p: &ParamStore<f64>, with_grad: bool| {
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::from_vec(size * size, 3, z.data.clone()).unwrap());
        let tr = decoder_forward_tape(&mut tape, p, &cfg, zv, (size, size), &cond, &input).unwrap();
        let outs: Vec<_> = cams.iter().map(|c| render(&tr.scene, c, [1.0; 3]).unwrap()).collect();
        let ims: Vec<_> = outs.iter().map(|o| o.image.clone()).collect();
        let ds: Vec<_> = outs.iter().map(|o| o.depth.clone()).collect();
        let (lr, gr) = rgb_loss_grad(&ims, &gt_im).unwrap();
        let (ld, gd) = depth_loss_grad(&ds, &gt_d, &masks).unwrap();
        let loss = lr + 0.2 * ld;
        if !with_grad {
            return (loss, BTreeMap::new());
        }
        let mut acc = vec![GaussianGrad::zero(); tr.scene.len()];
        for (k, c) in cams.iter().enumerate() {
            let dd: Vec<f64> = gd[k].iter().map(|v| 0.2 * v).collect();
            for (a, g) in acc.iter_mut().zip(&render_backward(&tr.scene, c, &outs[k], &gr[k], &dd).unwrap()) {
                a.add_assign(g);
            }
        }
        let seed = raw_gradient(&tape, &cfg, &tr, &acc).unwrap();
        (loss, tape.backward(&[(tr.raw, seed)]).unwrap().for_store(&tape, p))
    };
    let (_, analytic) = eval(&params, true);
    let mut worst = (0.0f64, String::from("none"));
    for (name, g) in &analytic {
        let fd: Vec<f64> = (0..g.len())
            .map(|i| {
                let mut up = params.clone();
                up.tensor_mut(name).unwrap().data[i] += FD_STEP_DECODER;
                let mut down = params.clone();
                down.tensor_mut(name).unwrap().data[i] -= FD_STEP_DECODER;
                (eval(&up, false).0 - eval(&down, false).0) / (2.0 * FD_STEP_DECODER)
            })
            .collect();
        let err = relative(&g.data, &fd).unwrap_or(f64::INFINITY);
        if err > worst.0 {
            worst = (err, name.clone());
        }
    }
    worst
}

// 2. Analytic gradients vs central differences.
fn gradient_correctness() -> Outcome {
    let (rgb, rgb_group) = rasterizer_gradient_error(false);
    let (depth, depth_group) = rasterizer_gradient_error(true);
    let (dec, dec_tensor) = decoder_gradient_error();
    outcome(
        rgb <= FD_REL_TOL && depth <= FD_REL_TOL && dec <= FD_REL_TOL,
        format!(
            "worst relative error: rgb {rgb:.1e} ({rgb_group}), depth {depth:.1e} ({depth_group}), \
             decoder {dec:.1e} ({dec_tensor}); tol {FD_REL_TOL:.0e}"
        ),
    )
}

// 3. Loss composition on hand-computed inputs.
fn loss_formulas() -> Outcome {
    let cfg = LossConfig::default();
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    // 2x2 image, one channel entry off by 0.5: MSE = 0.25 / 12.
    let a = ImageBuffer::filled(2, 2, [0.5f64; 3]);
    let mut b = a.clone();
    b.pixels[4] = 1.0;
    let rgb = rgb_loss(&[a], &[b]).unwrap();
    checks.push(("rgb", rgb, 0.25 / 12.0));
    // Depth errors 1 and 3 on the two masked pixels: (1 + 9) / 2.
    let mut out = DepthBuffer::zeros(2, 2);
    out.depth = vec![3.0, 9.0, 5.0, 2.0];
    let mut tgt = DepthBuffer::zeros(2, 2);
    tgt.depth = vec![2.0, 0.0, 2.0, 2.0];
    let d = depth_loss(&[out], &[tgt], &[vec![true, false, true, false]]).unwrap();
    checks.push(("depth", d, 5.0));
    checks.push(("l3d", loss_3d(rgb, d, &cfg), 0.25 / 12.0 + 0.2 * 5.0));
    checks.push(("l3d(0.3, 0.7)", loss_3d(0.3, 0.7, &cfg), 0.44));
    let z = LatentGrid::<f64>::zeros(1, 1, 2, 1).unwrap();
    let z1 = z.with_data(vec![0.1, -0.2, 0.3, 0.0, 0.0, 0.6]).unwrap();
    let l2 = loss_2d(&z1, &z).unwrap();
    checks.push(("l2d", l2, (0.01 + 0.04 + 0.09 + 0.36) / 6.0));
    checks.push(("distill", loss_distill(l2, 0.4, &cfg), (0.5 / 6.0) + 1.5 * 0.4));
    checks.push(("distill(1, 1)", loss_distill(1.0, 1.0, &cfg), 2.5));
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let weights_ok = cfg.lambda_depth == 0.2 && cfg.lambda_3d == 1.5;
    outcome(
        worst <= LOSS_TOL && weights_ok,
        format!(
            "{} hand-computed values, max error {worst:.1e} (tol {LOSS_TOL:.0e}); lambda_depth {} lambda_3d {}",
            checks.len(),
            cfg.lambda_depth,
            cfg.lambda_3d
        ),
    )
}

// 4. Overfitting one object.
fn stage_one_convergence() -> Outcome {
    let dir = tempdir();
    let cfg = RunConfig::overfit().with_root(dir.path());
    let start = Instant::now();
    gen_data(&cfg).unwrap();
    let report = train_decoder(&cfg).unwrap();
    let sample = &load_train(&cfg).unwrap()[0];
    let scene = gsd_models::decoder_forward(&report.params, &cfg.decoder, &sample.latents, &sample.cond, &sample.input_cameras).unwrap();
    let views: Vec<usize> = (0..sample.views()).collect();
    let outs = render_views(&scene, sample, &views, [1.0; 3]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut psnr_sum = 0.0;
    let (mut err, mut count) = (0.0f64, 0usize);
    for (v, o) in outs.iter().enumerate() {
        psnr_sum += psnr(&o.image, &sample.data.images[v]).unwrap();
        for (i, &m) in sample.masks[v].iter().enumerate() {
            if m {
                err += (o.depth.depth[i] - sample.data.depths[v].depth[i]).abs() as f64;
                count += 1;
            }
        }
    }
    let mean_psnr = psnr_sum / outs.len() as f64;
    let extent = 2.0 * OBJECT_RADIUS;
    let mae = err / count as f64;
    outcome(
        mean_psnr >= OVERFIT_PSNR_DB && mae <= OVERFIT_DEPTH_FRACTION * extent && secs <= OVERFIT_BUDGET_S,
        format!(
            "{} steps: train-view PSNR {mean_psnr:.2} dB (>= {OVERFIT_PSNR_DB}), masked depth MAE {mae:.4} \
             (<= {:.3} = 2% of extent {extent}), {secs:.0}s (<= {OVERFIT_BUDGET_S}s) over {} views",
            cfg.stage_one.steps,
            OVERFIT_DEPTH_FRACTION * extent,
            outs.len()
        ),
    )
}

/// The toy run shared by the distillation and LoRA criteria.
struct ToyRun {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    summary: DistillSummary,
    decoder_checksum_after: String,
    denoiser_checksum_after: String,
    checks_logged: usize,
}

fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempdir();
        let cfg = RunConfig::toy().with_root(dir.path());
        gen_data(&cfg).unwrap();
        train_decoder(&cfg).unwrap();
        train_denoiser(&cfg).unwrap();
        let report = distill(&cfg).unwrap();
        let log: Vec<serde_json::Value> = gsd_pipeline::log::read_jsonl(&cfg.out_dir.join("distill_log.jsonl")).unwrap();
        let mut den = load_denoiser(&cfg).unwrap();
        let _ = init_adapters(&cfg, &mut den).unwrap();
        ToyRun {
            decoder_checksum_after: load_decoder(&cfg).unwrap().checksum(true),
            denoiser_checksum_after: den.checksum(true),
            checks_logged: log.iter().filter(|l| l["checksums_verified"] == true).count(),
            summary: report.summary,
            cfg,
            _dir: dir,
        }
    })
}

// 5. Distillation lowers held-out reconstruction loss.
fn distillation_efficacy() -> Outcome {
    let run = toy_run();
    let s = &run.summary;
    let frozen = s.decoder_checksum == run.decoder_checksum_after && s.denoiser_checksum == run.denoiser_checksum_after;
    outcome(
        s.distilled.mean_loss_3d < s.initial.mean_loss_3d && s.distilled.mean_chamfer <= s.initial.mean_chamfer && frozen,
        format!(
            "{} held-out objects: L3D {:.5} -> {:.5}, chamfer {:.5} -> {:.5}; frozen checksums unchanged: {frozen} \
             ({} in-run verifications)",
            s.initial.objects.len(),
            s.initial.mean_loss_3d,
            s.distilled.mean_loss_3d,
            s.initial.mean_chamfer,
            s.distilled.mean_chamfer,
            run.checks_logged
        ),
    )
}

fn cast_lora(l: &Lora<f32>) -> Lora<f64> {
    Lora {
        cfg: l.cfg,
        targets: l.targets.clone(),
        store: l.store.cast(),
    }
}

// 6. Adapters are an exact no-op at init and merge into the weights.
fn lora_contract() -> Outcome {
    let run = toy_run();
    let cfg = &run.cfg;
    let sample = &load_train(cfg).unwrap()[0];
    let inputs = sample.denoiser_inputs(&cfg.denoiser).unwrap();
    let schedule = make_schedule(cfg.diffusion_steps).unwrap();
    let z_t = add_noise(&schedule, &sample.latents, 30, &gaussian_noise(&sample.latents, 5)).unwrap();
    let base = load_denoiser(cfg).unwrap();
    let plain = denoiser_forward(&base, None, &cfg.denoiser, &inputs, &z_t, 30).unwrap();
    let mut frozen = base.clone();
    let fresh = init_adapters(cfg, &mut frozen).unwrap();
    let with_fresh = denoiser_forward(&frozen, Some(&fresh), &cfg.denoiser, &inputs, &z_t, 30).unwrap();
    let bits = |z: &LatentGrid<f32>| z.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&plain) == bits(&with_fresh);

    let mut frozen = base.clone();
    let trained = load_adapters(cfg, &mut frozen).unwrap();
    let moved = trained.store.iter().any(|(n, p)| n.ends_with(".lora_b") && p.value.data.iter().any(|&v| v != 0.0));
    let base64 = frozen.cast::<f64>();
    let lora64 = cast_lora(&trained);
    let inputs64 = DenoiserInputs::new(
        &cfg.denoiser,
        &sample.conditioning_image().cast(),
        &FeatureTokens {
            tokens: sample.cond.tokens.cast(),
            kind: sample.cond.kind,
        },
        &sample.input_cameras.iter().map(|c| c.spec().build().unwrap()).collect::<Vec<Camera<f64>>>(),
    )
    .unwrap();
    let z64 = z_t.cast::<f64>();
    let adapted = denoiser_forward(&base64, Some(&lora64), &cfg.denoiser, &inputs64, &z64, 30).unwrap();
    let merged = denoiser_forward(&merge_lora(&base64, &lora64).unwrap(), None, &cfg.denoiser, &inputs64, &z64, 30).unwrap();
    let diff = adapted.data.iter().zip(&merged.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let adapted32 = denoiser_forward(&frozen, Some(&trained), &cfg.denoiser, &inputs, &z_t, 30).unwrap();
    let merged32 = denoiser_forward(&merge_lora(&frozen, &trained).unwrap(), None, &cfg.denoiser, &inputs, &z_t, 30).unwrap();
    let diff32 = adapted32.data.iter().zip(&merged32.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    outcome(
        identical && moved && diff <= MERGE_TOL,
        format!(
            "init output bit-identical: {identical}; trained adapters non-trivial: {moved}; merged vs adapted max diff \
             {diff:.1e} in f64 (tol {MERGE_TOL:.0e}), {diff32:.1e} in f32"
        ),
    )
}

// 7. Schedule and codec exactness.
fn schedule_codec() -> Outcome {
    let s = make_schedule(50).unwrap();
    let ab = &s.alpha_bar;
    let first = ab[0] == 1.0;
    let strict = ab.windows(2).all(|w| w[1] < w[0]);
    let last = ab[50];
    // Cosine schedule closed form at the midpoint.
    let f = |t: f64| ((t / 50.0 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let mid = (ab[25] - f(25.0) / f(0.0)).abs() < 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = LatentGrid::<f64>::zeros(2, 4, 4, 2).unwrap();
    let z = z.with_data((0..z.data.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let identity = add_noise(&s, &z, 0, &gaussian_noise(&z, 9)).unwrap() == z;
    let images: Vec<ImageBuffer<f32>> = (0..3)
        .map(|k| {
            let px = (0..16 * 16 * 3).map(|i| dequantize_u8(((i * 131 + k * 17) % 256) as u8)).collect();
            ImageBuffer::from_pixels(16, 16, px).unwrap()
        })
        .collect();
    let lat: LatentGrid<f64> = encode_views(&images, 4).unwrap();
    let back: Vec<ImageBuffer<f32>> = decode_latents(&lat);
    let exact = images
        .iter()
        .zip(&back)
        .all(|(a, b)| a.pixels.iter().zip(&b.pixels).all(|(x, y)| x.to_bits() == y.to_bits()));
    outcome(
        first && strict && last <= ALPHA_BAR_T_MAX && mid && identity && exact,
        format!(
            "alpha_bar[0]=1: {first}; strictly decreasing: {strict}; alpha_bar[T]={last:.1e} (<= {ALPHA_BAR_T_MAX:.0e}); \
             closed form: {mid}; add_noise(t=0) identity: {identity}; codec bit-exact: {exact}"
        ),
    )
}

// 8. Metric identities and nearest-neighbour oracle.
fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let px: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let im = ImageBuffer::from_pixels(32, 32, px).unwrap();
    let p = psnr(&im, &im).unwrap();
    let s = ssim(&im, &im).unwrap();
    let pts: Vec<[f64; 3]> = (0..400).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
    let x = PointCloud::new(pts.clone()).unwrap();
    let c = chamfer(&x, &x).unwrap();
    let i = iou_voxel(&x, &x, 32, &Bounds::cube(1.0)).unwrap();
    let f = fscore(&x, &x, 0.05).unwrap();
    let mut nn_ok = true;
    for n in [1usize, 7, 100, 512] {
        let cloud: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        let tree = KdTree::build(&cloud);
        for _ in 0..200 {
            let q = [0; 3].map(|_| rng.random_range(-1.2..1.2));
            nn_ok &= tree.nearest(&q) == nearest_brute(&cloud, &q);
        }
    }
    let pass = c == 0.0 && i == 1.0 && f == 1.0 && p == PSNR_CAP && s == 1.0 && nn_ok;
    outcome(
        pass,
        format!("chamfer {c}, iou {i}, fscore {f}, psnr {p} (cap {PSNR_CAP}), ssim {s}; k-d tree == brute force (n <= 512): {nn_ok}"),
    )
}

// 9. Dataset protocol.
fn protocol_fidelity() -> Outcome {
    let dir = tempdir();
    let mut cfg = RunConfig::desk().with_root(dir.path());
    cfg.dataset.object_count = 3;
    cfg.dataset.resolution = 16;
    cfg.holdout = 1;
    cfg.eval.dataset.object_count = 2;
    cfg.eval.dataset.resolution = 16;
    cfg.condition.patch = 4;
    gen_data(&cfg).unwrap();
    let train = DatasetManifest::load(&cfg.data_dir()).unwrap();
    let eval = DatasetManifest::load(&cfg.eval_dir()).unwrap();
    // floor(i * 84 / 16) written out.
    let expected_inputs = vec![0, 5, 10, 15, 21, 26, 31, 36, 42, 47, 52, 57, 63, 68, 73, 78];
    let views_ok = train.objects.iter().all(|o| o.cameras.len() == 84 && o.images.len() == 84 && o.depths.len() == 84);
    let elev_ok = train
        .objects
        .iter()
        .chain(&eval.objects)
        .all(|o| (-5.0..=30.0).contains(&o.elevation_deg));
    let inputs_ok = train.objects.iter().all(|o| o.input_views == expected_inputs)
        && select_input_views(84, 16).unwrap() == expected_inputs;
    let eval_ok = eval.objects.iter().all(|o| {
        o.cameras.len() == 21 && o.conditioning_view == 0 && o.eval_views == (1..21).collect::<Vec<_>>()
    });
    let report = evaluate(&cfg, SceneSource::GroundTruth).unwrap();
    let cloud = sample_points(&gen_object(1), cfg.eval.points, 0).unwrap();
    let points_ok = report.points == 4096 && cloud.len() == 4096;
    let self_ok = report.iou == 1.0 && report.chamfer == 0.0;
    outcome(
        views_ok && elev_ok && inputs_ok && eval_ok && points_ok && self_ok,
        format!(
            "Q=84: {views_ok}; elevation in [-5, 30]: {elev_ok}; inputs = select_input_views(84, 16): {inputs_ok}; \
             eval 21 views, view 0 conditions: {eval_ok}; 4096 points: {points_ok}; GT geometry self-eval exact: {self_ok} \
             (image PSNR {:.1} dB against 8-bit targets)",
            report.psnr
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

// 10. Every CLI command is reproducible byte for byte.
fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gsd");
    let run_all = |root: &Path| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let cfg_path = root.join("run.json");
        gsd_core::dataset::write_json(&cfg_path, &micro_config(&root.join("out"))).unwrap();
        let c = cfg_path.to_str().unwrap();
        let out = root.join("out");
        let image = out.join("data/obj_0000/view_00.png");
        let scene = out.join("infer/scene.json");
        let steps: Vec<Vec<String>> = vec![
            vec!["config".into(), "--config".into(), c.into()],
            vec!["gen-data".into(), "--config".into(), c.into()],
            vec!["train-decoder".into(), "--config".into(), c.into()],
            vec!["train-denoiser".into(), "--config".into(), c.into()],
            vec!["distill".into(), "--config".into(), c.into()],
            vec!["infer".into(), "--config".into(), c.into(), "--image".into(), image.display().to_string(), "--steps".into(), "3".into()],
            vec!["eval".into(), "--config".into(), c.into()],
            vec!["export-ply".into(), "--scene".into(), scene.display().to_string(), "--out".into(), out.join("export.ply").display().to_string()],
            vec!["ablate-frames".into(), "--config".into(), c.into(), "--frames".into(), "1,2".into()],
        ];
        let mut outputs = BTreeMap::new();
        for args in &steps {
            let o = Command::new(bin).args(args).output().unwrap();
            if !o.status.success() {
                return Err(format!("`gsd {}` failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
            }
            outputs.insert(PathBuf::from(format!("stdout-{}", args[0])), o.stdout);
        }
        let mut snap = snapshot(&out);
        snap.append(&mut outputs);
        Ok(snap)
    };
    let dir = tempdir();
    let first = match run_all(dir.path()) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    fs::remove_dir_all(dir.path().join("out")).unwrap();
    let second = match run_all(dir.path()) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "9 commands run twice, {} artifacts compared; differing: {:?}",
            first.len(),
            differing
        ),
    )
}

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "rasterizer oracle equivalence", rasterizer_oracle),
        (2, "gradient correctness", gradient_correctness),
        (3, "loss formulas", loss_formulas),
        (4, "stage-one convergence", stage_one_convergence),
        (5, "distillation efficacy", distillation_efficacy),
        (6, "LoRA contract", lora_contract),
        (7, "schedule and codec exactness", schedule_codec),
        (8, "metric identities", metric_identities),
        (9, "protocol fidelity", protocol_fidelity),
        (10, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
