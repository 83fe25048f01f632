//! Run configuration and named presets.

use std::path::{Path, PathBuf};

use gsd_core::dataset::{read_json, write_json, DatasetConfig, EVAL_SET_VIEWS};
use gsd_core::losses::LossConfig;
use gsd_core::metrics::{EVAL_POINTS, FSCORE_TAU_FRACTION, IOU_RESOLUTION};
use gsd_core::scenes::OBJECT_RADIUS;
use gsd_models::{ConditionConfig, DecoderConfig, DenoiserConfig};
use gsd_netkit::{AdamWConfig, LoraConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Optimization settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub steps: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    /// Linear learning-rate warmup length.
    pub warmup_steps: usize,
    /// Cosine decay to zero over the remaining steps.
    pub cosine_decay: bool,
    /// Global gradient norm clip.
    pub grad_clip: Option<f64>,
    /// Ground-truth views rendered per sample; `None` renders all of them.
    pub render_views: Option<usize>,
    pub seed: u64,
}

impl StageConfig {
    pub fn validate(&self, name: &str) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch == 0 {
            return Err(PipelineError::Usage(format!("{name}: batch must be >= 1")));
        }
        if self.render_views == Some(0) {
            return Err(PipelineError::Usage(format!("{name}: render_views must be >= 1")));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(PipelineError::Usage(format!("{name}: grad_clip must be positive")));
        }
        Ok(())
    }

    /// Learning rate for a zero-based step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.optimizer.lr;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if !self.cosine_decay || self.steps <= self.warmup_steps {
            return base;
        }
        let p = (step - self.warmup_steps) as f64 / (self.steps - self.warmup_steps) as f64;
        base * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Held-out evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluation objects: view 0 conditions, the rest are held out.
    pub dataset: DatasetConfig,
    pub points: usize,
    pub point_seed: u64,
    pub fscore_tau: f64,
    pub iou_resolution: usize,
    /// Half-width of the cube the IoU voxel grid covers.
    pub iou_half_extent: f64,
    pub sample_steps: usize,
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub out_dir: PathBuf,
    /// Training set location, shared by runs that differ only in training.
    pub data_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// The last `holdout` objects of the dataset are never trained on.
    pub holdout: usize,
    pub condition: ConditionConfig,
    pub decoder: DecoderConfig,
    pub denoiser: DenoiserConfig,
    pub lora: LoraConfig,
    pub loss: LossConfig,
    pub diffusion_steps: usize,
    pub decoder_seed: u64,
    pub denoiser_seed: u64,
    pub lora_seed: u64,
    pub stage_one: StageConfig,
    pub denoiser_pretrain: StageConfig,
    pub stage_two: StageConfig,
    /// Frozen-tensor checksums are re-verified this often during stage two.
    pub checksum_every: usize,
    pub eval: EvalConfig,
}

pub const PRESETS: [&str; 4] = ["overfit", "toy", "desk", "full"];

/// Base learning rate, used unless a preset overrides it.
pub const BASE_LR: f64 = 1e-5;

fn stage(steps: usize, batch: usize, lr: f64, seed: u64) -> StageConfig {
    StageConfig {
        steps,
        batch,
        optimizer: AdamWConfig {
            lr,
            ..AdamWConfig::default()
        },
        warmup_steps: 0,
        cosine_decay: false,
        grad_clip: None,
        render_views: None,
        seed,
    }
}

fn eval_config(resolution: usize, objects: usize) -> EvalConfig {
    EvalConfig {
        dataset: DatasetConfig {
            object_count: objects,
            views_per_object: EVAL_SET_VIEWS,
            input_views: 1,
            resolution,
            seed: 0x0e7a_1000,
            ..DatasetConfig::default()
        },
        points: EVAL_POINTS,
        point_seed: 7,
        fscore_tau: FSCORE_TAU_FRACTION * 2.0 * OBJECT_RADIUS,
        iou_resolution: IOU_RESOLUTION,
        iou_half_extent: 1.25 * OBJECT_RADIUS,
        sample_steps: 10,
        sample_seed: 11,
    }
}

impl RunConfig {
    /// The desk-scale defaults: 16 frames, base learning rate.
    pub fn desk() -> Self {
        let dataset = DatasetConfig {
            object_count: 200,
            seed: 2024,
            ..DatasetConfig::default()
        };
        let c = Self {
            preset: "desk".into(),
            out_dir: PathBuf::new(),
            data_dir: PathBuf::new(),
            eval_dir: PathBuf::new(),
            holdout: 20,
            condition: ConditionConfig::default(),
            decoder: DecoderConfig {
                views: dataset.input_views,
                ..DecoderConfig::default()
            },
            denoiser: DenoiserConfig {
                views: dataset.input_views,
                ..DenoiserConfig::default()
            },
            dataset,
            lora: LoraConfig::default(),
            loss: LossConfig::default(),
            diffusion_steps: 50,
            decoder_seed: 1,
            denoiser_seed: 2,
            lora_seed: 3,
            stage_one: stage(2000, 8, BASE_LR, 10),
            denoiser_pretrain: stage(2000, 8, BASE_LR, 20),
            stage_two: stage(1000, 4, BASE_LR, 30),
            checksum_every: 1000,
            eval: eval_config(64, 20),
        };
        c.with_root(Path::new("runs/desk"))
    }

    /// Full-scale step counts and batch sizes.
    pub fn full() -> Self {
        let mut c = Self::desk().with_root(Path::new("runs/full"));
        c.preset = "full".into();
        c.stage_one.steps = 80_000;
        c.stage_one.batch = 128;
        c.denoiser_pretrain.steps = 80_000;
        c.denoiser_pretrain.batch = 128;
        c.stage_two.steps = 40_000;
        c.stage_two.batch = 32;
        c
    }

    /// One object, four input frames, trained until it is reproduced.
    pub fn overfit() -> Self {
        let mut c = Self::desk().with_root(Path::new("runs/overfit"));
        c.preset = "overfit".into();
        c.dataset.object_count = 1;
        c.dataset.input_views = 4;
        c.dataset.seed = 5;
        c.holdout = 0;
        c.decoder = DecoderConfig {
            layers: 2,
            width: 64,
            views: 4,
            upsample_bands: 8,
            ..DecoderConfig::default()
        };
        c.denoiser = DenoiserConfig {
            layers: 2,
            width: 64,
            views: 4,
            ..DenoiserConfig::default()
        };
        c.stage_one = StageConfig {
            warmup_steps: 50,
            cosine_decay: true,
            grad_clip: Some(1.0),
            render_views: Some(4),
            ..stage(2000, 1, 2e-3, 10)
        };
        c.eval = eval_config(64, 1);
        c
    }

    /// 32 small objects with 8 held out; exercises both stages in minutes.
    pub fn toy() -> Self {
        let mut c = Self::desk().with_root(Path::new("runs/toy"));
        c.preset = "toy".into();
        c.dataset.object_count = 32;
        c.dataset.input_views = 4;
        c.dataset.resolution = 32;
        c.dataset.seed = 77;
        c.holdout = 8;
        c.condition.patch = 4;
        c.decoder = DecoderConfig {
            layers: 2,
            width: 64,
            views: 4,
            upsample_bands: 2,
            ..DecoderConfig::default()
        };
        c.denoiser = DenoiserConfig {
            layers: 2,
            width: 64,
            views: 4,
            ..DenoiserConfig::default()
        };
        let fast = |steps, batch, lr, seed| StageConfig {
            warmup_steps: 20,
            grad_clip: Some(1.0),
            render_views: Some(4),
            ..stage(steps, batch, lr, seed)
        };
        c.stage_one = StageConfig {
            cosine_decay: true,
            ..fast(600, 4, 1e-3, 10)
        };
        c.denoiser_pretrain = StageConfig {
            cosine_decay: true,
            render_views: None,
            ..fast(600, 4, 1e-3, 20)
        };
        c.stage_two = fast(200, 2, 1e-3, 30);
        c.eval = eval_config(32, 4);
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "overfit" => Ok(Self::overfit()),
            "toy" => Ok(Self::toy()),
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(PipelineError::Usage(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PipelineError::Missing {
                what: "config file",
                path: path.to_path_buf(),
            });
        }
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.eval.dataset.validate()?;
        self.decoder.validate()?;
        self.denoiser.validate()?;
        self.loss.validate()?;
        for (name, s) in [
            ("stage_one", &self.stage_one),
            ("denoiser_pretrain", &self.denoiser_pretrain),
            ("stage_two", &self.stage_two),
        ] {
            s.validate(name)?;
        }
        let usage = |m: String| Err(PipelineError::Usage(m));
        let n = self.dataset.input_views;
        if self.decoder.views != n || self.denoiser.views != n {
            return usage(format!(
                "decoder ({}) and denoiser ({}) views must equal dataset input_views ({n})",
                self.decoder.views, self.denoiser.views
            ));
        }
        if self.decoder.patch != self.denoiser.patch {
            return usage("decoder and denoiser must share the latent patch size".into());
        }
        if self.decoder.cond_dim != self.condition.dim || self.denoiser.cond_dim != self.condition.dim {
            return usage("conditioning width must match both networks".into());
        }
        let res = self.dataset.resolution;
        if res % self.decoder.patch != 0 || res % self.condition.patch != 0 {
            return usage(format!("resolution {res} must be divisible by the patch sizes"));
        }
        if self.eval.dataset.resolution != res {
            return usage("evaluation and training resolutions differ".into());
        }
        if self.holdout >= self.dataset.object_count && self.holdout > 0 {
            return usage("holdout leaves no training objects".into());
        }
        if self.diffusion_steps == 0 || self.checksum_every == 0 || self.eval.points == 0 {
            return usage("diffusion_steps, checksum_every and eval.points must be >= 1".into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone()
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.eval_dir.clone()
    }

    /// Place the run, its data included, under `dir`.
    pub fn with_root(mut self, dir: &Path) -> Self {
        self.out_dir = dir.to_path_buf();
        self.data_dir = dir.join("data");
        self.eval_dir = dir.join("eval_data");
        self
    }

    pub fn decoder_ckpt(&self) -> PathBuf {
        self.out_dir.join("decoder")
    }

    pub fn denoiser_ckpt(&self) -> PathBuf {
        self.out_dir.join("denoiser")
    }

    pub fn adapter_ckpt(&self) -> PathBuf {
        self.out_dir.join("adapters")
    }

    /// Number of objects stage one and two may train on.
    pub fn train_objects(&self) -> usize {
        self.dataset.object_count - self.holdout
    }

    /// Write the effective configuration into the output directory.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| gsd_core::Error::io(format!("creating {}", self.out_dir.display()), e))?;
        write_json(&self.out_dir.join("config.json"), self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            RunConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(matches!(RunConfig::preset("huge"), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn full_scale_values() {
        let c = RunConfig::full();
        assert_eq!((c.stage_one.steps, c.stage_one.batch), (80_000, 128));
        assert_eq!((c.stage_two.steps, c.stage_two.batch), (40_000, 32));
        assert_eq!(c.stage_one.optimizer.lr, 1e-5);
        assert_eq!((c.loss.lambda_depth, c.loss.lambda_3d), (0.2, 1.5));
        assert_eq!(c.dataset.views_per_object, 84);
        assert_eq!(c.decoder.views, 16);
    }

    #[test]
    fn lr_schedule() {
        let s = StageConfig {
            warmup_steps: 10,
            cosine_decay: true,
            ..stage(110, 1, 1.0, 0)
        };
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(9), 1.0);
        assert_eq!(s.lr_at(10), 1.0);
        assert!((s.lr_at(60) - 0.5).abs() < 1e-12);
        assert!(s.lr_at(109) < 1e-3);
        let flat = stage(5, 1, 0.3, 0);
        assert_eq!(flat.lr_at(4), 0.3);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = RunConfig::toy();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["surprise"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn mismatched_views_rejected() {
        let mut c = RunConfig::toy();
        c.decoder.views = 8;
        assert!(matches!(c.validate(), Err(PipelineError::Usage(_))));
    }
}
