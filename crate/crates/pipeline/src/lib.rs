//! Orchestration of the two training stages, inference, evaluation and the
//! frame-count ablation, shared by the `gsd` binary and the test suites.

pub mod ablate;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod infer;
pub mod log;
pub mod objective;
pub mod train;

pub use config::{RunConfig, StageConfig};
pub use distill::distill;
pub use error::{PipelineError, Result};
pub use eval::{evaluate, SceneSource};
pub use train::{train_decoder, train_denoiser};

use gsd_core::dataset::{make_eval_set, render_dataset, DatasetManifest};

/// Render the training set and the evaluation set of `cfg`.
pub fn gen_data(cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    cfg.validate()?;
    cfg.echo()?;
    let train = render_dataset(&cfg.dataset, &cfg.data_dir())?;
    let eval = make_eval_set(&cfg.eval.dataset, &cfg.eval_dir())?;
    Ok((train, eval))
}
