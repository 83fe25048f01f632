use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsd_core::dataset::{read_json, write_json};
use gsd_core::gaussian::GaussianScene;
use gsd_core::ply::{export_ply, import_ply};
use gsd_pipeline::ablate::ablate_frames;
use gsd_pipeline::infer::{run_infer, Models};
use gsd_pipeline::{distill, evaluate, gen_data, train_decoder, train_denoiser};
use gsd_pipeline::{PipelineError, Result, RunConfig, SceneSource};

#[derive(Parser)]
#[command(name = "gsd", version, about = "Feed-forward Gaussian splat reconstruction with geometric distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: overfit, toy, desk or full.
    #[arg(long)]
    preset: Option<String>,
    /// Put outputs and data under this directory instead.
    #[arg(long)]
    root: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => return Err(PipelineError::Usage("pass --config FILE or --preset NAME".into())),
        };
        let cfg = match &self.root {
            Some(dir) => cfg.with_root(dir),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as JSON.
    Config {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render the training and evaluation sets.
    GenData {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Stage one: train the Gaussian splatting decoder.
    TrainDecoder {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pretrain the base multi-view denoiser.
    TrainDenoiser {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Stage two: distill the denoiser through the frozen decoder.
    Distill {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reconstruct a scene from one image.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        /// Conditioning image (PNG at the configured resolution).
        #[arg(long)]
        image: PathBuf,
        /// Elevation of the conditioning view in degrees.
        #[arg(long, default_value_t = 12.5)]
        elevation: f64,
        /// Number of sampler steps.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Seed of the initial sampler noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the base denoiser without adapters.
        #[arg(long)]
        no_adapters: bool,
        /// Output directory (default: <out_dir>/infer).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate on the held-out views of the evaluation set.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Use the base denoiser without adapters.
        #[arg(long)]
        no_adapters: bool,
        /// Evaluate the ground-truth scenes instead of reconstructions.
        #[arg(long, conflicts_with = "no_adapters")]
        ground_truth: bool,
        /// Output file (default: <out_dir>/metrics.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat train, distill and eval for several frame counts.
    AblateFrames {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated frame counts.
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16])]
        frames: Vec<usize>,
    },
    /// Convert a scene JSON file into a binary PLY file.
    ExportPly {
        /// Scene JSON written by `infer`.
        #[arg(long)]
        scene: PathBuf,
        /// Output PLY path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Config { run } => {
            let cfg = run.resolve()?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
        Command::GenData { run } => {
            let cfg = run.resolve()?;
            let (train, eval) = gen_data(&cfg)?;
            eprintln!(
                "rendered {} training and {} evaluation objects",
                train.objects.len(),
                eval.objects.len()
            );
        }
        Command::TrainDecoder { run } => {
            let r = train_decoder(&run.resolve()?)?;
            eprintln!("decoder loss {:.6} -> {:.6}", r.first_loss, r.last_loss);
        }
        Command::TrainDenoiser { run } => {
            let r = train_denoiser(&run.resolve()?)?;
            eprintln!("denoiser loss {:.6} -> {:.6}", r.first_loss, r.last_loss);
        }
        Command::Distill { run } => {
            let r = distill(&run.resolve()?)?;
            let s = &r.summary;
            eprintln!(
                "held-out L3D {:.6} -> {:.6}, chamfer {:.6} -> {:.6}",
                s.initial.mean_loss_3d, s.distilled.mean_loss_3d, s.initial.mean_chamfer, s.distilled.mean_chamfer
            );
        }
        Command::Infer {
            run,
            image,
            elevation,
            steps,
            seed,
            no_adapters,
            out,
        } => {
            let cfg = run.resolve()?;
            let models = Models::load(&cfg, !no_adapters)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("infer"));
            let scene = run_infer(&cfg, &models, &image, elevation, steps, seed, &out)?;
            eprintln!("{} Gaussians written to {}", scene.len(), out.display());
        }
        Command::Eval {
            run,
            no_adapters,
            ground_truth,
            out,
        } => {
            let cfg = run.resolve()?;
            let source = if ground_truth {
                SceneSource::GroundTruth
            } else {
                SceneSource::Model { adapters: !no_adapters }
            };
            let report = evaluate(&cfg, source)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("metrics.json"));
            write_json(&out, &report)?;
            eprintln!(
                "psnr {:.3} ssim {:.4} chamfer {:.4} iou {:.4} fscore {:.4}",
                report.psnr, report.ssim, report.chamfer, report.iou, report.fscore
            );
        }
        Command::AblateFrames { run, frames } => {
            let report = ablate_frames(&run.resolve()?, &frames)?;
            println!("{}", report.markdown());
        }
        Command::ExportPly { scene, out } => {
            if !scene.exists() {
                return Err(PipelineError::Missing {
                    what: "scene file",
                    path: scene,
                });
            }
            let s: GaussianScene<f32> = read_json(&scene)?;
            s.validate()?;
            export_ply(&s, &out)?;
            let back = import_ply(&out)?;
            eprintln!("{} vertices written to {}", back.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
