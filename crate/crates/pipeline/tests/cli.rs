//! The `gsd` binary and the library stages on a micro configuration.

use std::path::Path;
use std::process::Command;

use gsd_core::dataset::{read_json, write_json};
use gsd_core::gaussian::GaussianScene;
use gsd_core::raster::render;
use gsd_models::decoder_forward;
use gsd_models::init_decoder;
use gsd_pipeline::data::load_train;
use gsd_pipeline::eval::MetricsReport;
use gsd_pipeline::log::read_jsonl;
use gsd_pipeline::{gen_data, train_decoder, RunConfig};
use serde_json::Value;

mod common;
use common::micro_config;

fn gsd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gsd")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    gsd(args).status.code().unwrap()
}

fn write_config(root: &Path) -> (RunConfig, String) {
    let cfg = micro_config(&root.join("out"));
    let path = root.join("run.json");
    write_json(&path, &cfg).unwrap();
    (cfg, path.display().to_string())
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["config", "--preset", "huge"]), 1);
    assert_eq!(code(&["config", "--preset", "toy", "--config", "x.json"]), 1);
    let missing = dir.path().join("absent.json").display().to_string();
    assert_eq!(code(&["train-decoder", "--config", &missing]), 2);
    let (_, cfg) = write_config(dir.path());
    // No dataset has been generated yet.
    assert_eq!(code(&["train-decoder", "--config", &cfg]), 2);
    assert_eq!(code(&["config", "--config", &cfg]), 0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"preset": "micro", "surprise": 1}"#).unwrap();
    assert_eq!(code(&["config", "--config", bad.to_str().unwrap()]), 2);
}

#[test]
fn config_command_prints_the_effective_preset() {
    let out = gsd(&["config", "--preset", "toy"]);
    assert!(out.status.success());
    let printed: RunConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, RunConfig::toy());
}

#[test]
fn first_logged_loss_matches_an_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    gen_data(&cfg).unwrap();
    train_decoder(&cfg).unwrap();
    let log: Vec<Value> = read_jsonl(&cfg.out_dir.join("decoder_log.jsonl")).unwrap();
    assert_eq!(log.len(), cfg.stage_one.steps);
    let first = &log[0];
    assert_eq!(first["lambda_depth"], 0.2);
    let samples = load_train(&cfg).unwrap();
    let params = init_decoder::<f32>(&cfg.decoder, cfg.decoder_seed).unwrap();
    let objects: Vec<usize> = serde_json::from_value(first["objects"].clone()).unwrap();
    let views: Vec<Vec<usize>> = serde_json::from_value(first["views"].clone()).unwrap();
    let mut total = 0.0;
    for (&o, vs) in objects.iter().zip(&views) {
        let s = &samples[o];
        let scene = decoder_forward(&params, &cfg.decoder, &s.latents, &s.cond, &s.input_cameras).unwrap();
        let (mut rgb, mut n_rgb, mut depth, mut n_depth) = (0.0f64, 0usize, 0.0f64, 0usize);
        for &v in vs {
            let out = render(&scene, &s.data.cameras[v], [1.0; 3]).unwrap();
            for (a, b) in out.image.pixels.iter().zip(&s.data.images[v].pixels) {
                rgb += ((a - b) as f64).powi(2);
                n_rgb += 1;
            }
            for (i, (a, b)) in out.depth.depth.iter().zip(&s.data.depths[v].depth).enumerate() {
                if s.data.depths[v].alpha[i] > 0.5 {
                    depth += ((a - b) as f64).powi(2);
                    n_depth += 1;
                }
            }
        }
        total += rgb / n_rgb as f64 + 0.2 * depth / n_depth.max(1) as f64;
    }
    let expected = total / objects.len() as f64;
    let logged = first["loss_3d"].as_f64().unwrap();
    assert!((logged - expected).abs() <= 1e-5 * expected, "{logged} vs {expected}");
}

#[test]
fn full_command_sequence_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, c) = write_config(dir.path());
    for cmd in ["gen-data", "train-decoder", "train-denoiser", "distill"] {
        let out = gsd(&[cmd, "--config", &c]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let echoed: RunConfig = read_json(&cfg.out_dir.join("config.json")).unwrap();
    assert_eq!(echoed, cfg);

    let log: Vec<Value> = read_jsonl(&cfg.out_dir.join("distill_log.jsonl")).unwrap();
    for line in &log {
        let f = |k: &str| line[k].as_f64().unwrap();
        assert_eq!(f("lambda_3d"), 1.5);
        assert_eq!(f("lambda_depth"), 0.2);
        // Batch means of the composed terms, so only rounding separates them.
        assert!((f("loss_3d") - (f("loss_rgb") + 0.2 * f("loss_depth"))).abs() <= 1e-12 * f("loss_3d"));
        assert!((f("loss_distill") - (f("loss_2d") + 1.5 * f("loss_3d"))).abs() <= 1e-12 * f("loss_distill"));
    }
    assert!(log.last().unwrap()["checksums_verified"].as_bool().unwrap());

    let image = cfg.data_dir().join("obj_0000/view_00.png");
    let infer_dir = dir.path().join("infer");
    let out = gsd(&[
        "infer",
        "--config",
        &c,
        "--image",
        image.to_str().unwrap(),
        "--out",
        infer_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scene: GaussianScene<f32> = read_json(&infer_dir.join("scene.json")).unwrap();
    let cells = cfg.dataset.resolution / cfg.decoder.patch;
    assert_eq!(scene.len(), cfg.decoder.gaussian_count(cells, cells));
    scene.validate().unwrap();
    assert!(scene
        .gaussians
        .iter()
        .all(|g| g.color.iter().all(|c| (0.0..=1.0).contains(c))));
    assert!(infer_dir.join("scene.ply").exists());

    let exported = dir.path().join("export.ply");
    let scene_json = infer_dir.join("scene.json");
    assert_eq!(
        code(&["export-ply", "--scene", scene_json.to_str().unwrap(), "--out", exported.to_str().unwrap()]),
        0
    );
    assert_eq!(std::fs::read(&exported).unwrap(), std::fs::read(infer_dir.join("scene.ply")).unwrap());

    let metrics = dir.path().join("gt.json");
    assert_eq!(code(&["eval", "--config", &c, "--ground-truth", "--out", metrics.to_str().unwrap()]), 0);
    let gt: MetricsReport = read_json(&metrics).unwrap();
    assert_eq!((gt.iou, gt.chamfer, gt.fscore), (1.0, 0.0, 1.0));
    assert_eq!(gt.points, cfg.eval.points);
    assert_eq!(code(&["eval", "--config", &c]), 0);
    let model: MetricsReport = read_json(&cfg.out_dir.join("metrics.json")).unwrap();
    assert_eq!(model.source, "distilled");
    assert!(model.psnr.is_finite() && model.psnr < gt.psnr);
}
