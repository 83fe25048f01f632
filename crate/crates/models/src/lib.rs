//! Learned components: the Gaussian splatting decoder, the toy multi-view
//! denoiser with its noise schedule and sampler, and the frozen
//! conditioning feature extractor they share.

pub mod decoder;
pub mod denoiser;
pub mod features;
pub mod schedule;

pub use decoder::{decoder_forward, init_decoder, DecoderConfig};
pub use denoiser::{init_denoiser, DenoiserConfig};
pub use features::{ConditionConfig, ConditionEncoder, FeatureTokens};
pub use schedule::{add_noise, make_schedule, NoiseSchedule};
