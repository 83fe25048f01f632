//! Minimal reverse-mode differentiation and transformer toolkit.
//!
//! Values are row-major matrices ([`Tensor`]); a forward pass records onto a
//! [`Tape`] and [`Tape::backward`] returns gradients for every tracked node.
//! Parameters live in named [`ParamStore`]s, are updated by [`AdamW`] and
//! saved as little-endian `f32` checkpoints with a JSON index.

pub mod layers;
pub mod lora;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use layers::Layers;
pub use lora::{attach_lora, merge_lora, Lora, LoraConfig};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{AttnLayout, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensorf = Tensor<f32>;
pub type Tensord = Tensor<f64>;
pub type Tapef = Tape<f32>;
pub type Taped = Tape<f64>;
