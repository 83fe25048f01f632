//! Fixtures shared by the integration tests.

use std::path::Path;

use gsd_pipeline::RunConfig;

/// A configuration small enough to run every command twice in seconds.
pub fn micro_config(root: &Path) -> RunConfig {
    let mut c = RunConfig::toy().with_root(root);
    c.preset = "micro".into();
    c.dataset.object_count = 3;
    c.dataset.views_per_object = 6;
    c.dataset.input_views = 2;
    c.dataset.resolution = 16;
    c.holdout = 1;
    c.decoder.views = 2;
    c.decoder.width = 16;
    c.decoder.layers = 1;
    c.decoder.upsample_bands = 1;
    c.denoiser.views = 2;
    c.denoiser.width = 16;
    c.denoiser.layers = 1;
    for s in [&mut c.stage_one, &mut c.denoiser_pretrain, &mut c.stage_two] {
        s.steps = 3;
        s.batch = 2;
        s.warmup_steps = 1;
    }
    c.checksum_every = 2;
    c.eval.dataset.object_count = 1;
    c.eval.dataset.resolution = 16;
    c.eval.points = 256;
    c.eval.sample_steps = 2;
    c
}
