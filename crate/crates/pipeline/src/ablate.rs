//! Frame-count ablation: the full toy pipeline once per number of frames.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gsd_core::dataset::write_json;
use gsd_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::distill::distill;
use crate::error::{PipelineError, Result};
use crate::eval::{evaluate, SceneSource};
use crate::train::{train_decoder, train_denoiser};

/// Published PSNR by frame count, shown as context only.
pub const PUBLISHED_REFERENCE: [(usize, f64); 3] = [(16, 20.390), (8, 19.733), (4, 19.548)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub frames: usize,
    pub dataset_seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub chamfer: f64,
    pub iou: f64,
    pub fscore: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub published_reference: Vec<(usize, f64)>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn markdown(&self) -> String {
        let mut s = String::from("Published reference (full scale, PSNR): ");
        let refs: Vec<String> = self.published_reference.iter().map(|(n, p)| format!("N={n} {p:.3}")).collect();
        s.push_str(&refs.join(" vs "));
        s.push_str("\n\n| N | dataset seed | PSNR | SSIM | chamfer | IoU | F-score |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.frames, r.dataset_seed, r.psnr, r.ssim, r.chamfer, r.iou, r.fscore
            );
        }
        s
    }
}

/// `base` rerun with `n` generated frames under `root/n{n}`, sharing data.
pub fn frames_config(base: &RunConfig, n: usize, root: &Path) -> RunConfig {
    let mut c = base.clone();
    c.dataset.input_views = n;
    c.decoder.views = n;
    c.denoiser.views = n;
    c.out_dir = root.join(format!("n{n}"));
    c
}

/// Train, distill and evaluate once per frame count; the dataset of `base`
/// must already exist and is shared by every row.
pub fn ablate_frames(base: &RunConfig, frames: &[usize]) -> Result<AblationReport> {
    if frames.is_empty() {
        return Err(PipelineError::Usage("no frame counts given".into()));
    }
    let root = base.out_dir.join("ablate");
    let mut rows = Vec::new();
    for &n in frames {
        let cfg = frames_config(base, n, &root);
        cfg.validate()?;
        train_decoder(&cfg)?;
        train_denoiser(&cfg)?;
        distill(&cfg)?;
        let m = evaluate(&cfg, SceneSource::Model { adapters: true })?;
        write_json(&cfg.out_dir.join("metrics.json"), &m)?;
        rows.push(AblationRow {
            frames: n,
            dataset_seed: cfg.dataset.seed,
            psnr: m.psnr,
            ssim: m.ssim,
            chamfer: m.chamfer,
            iou: m.iou,
            fscore: m.fscore,
        });
    }
    let report = AblationReport {
        published_reference: PUBLISHED_REFERENCE.to_vec(),
        rows,
    };
    write_json(&root.join("ablation.json"), &report)?;
    let md = root.join("ablation.md");
    fs::write(&md, report.markdown()).map_err(|e| Error::io(format!("writing {}", md.display()), e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_reference_header_and_one_row_per_setting() {
        let row = |frames| AblationRow {
            frames,
            dataset_seed: 9,
            psnr: 20.0,
            ssim: 0.8,
            chamfer: 0.1,
            iou: 0.5,
            fscore: 0.6,
        };
        let r = AblationReport {
            published_reference: PUBLISHED_REFERENCE.to_vec(),
            rows: vec![row(4), row(8)],
        };
        let md = r.markdown();
        assert!(md.starts_with("Published reference (full scale, PSNR): N=16 20.390 vs N=8 19.733 vs N=4 19.548"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| 4 ") || l.starts_with("| 8 ")).count(), 2);
    }

    #[test]
    fn frame_configs_share_data() {
        let base = RunConfig::toy();
        let c = frames_config(&base, 8, Path::new("/tmp/x"));
        assert_eq!(c.data_dir, base.data_dir);
        assert_eq!((c.decoder.views, c.denoiser.views, c.dataset.input_views), (8, 8, 8));
        c.validate().unwrap();
    }
}
