//! Core types and numerics for feed-forward Gaussian splat decoding.
//!
//! Everything here is generic over the scalar type through [`Real`]; the
//! aliases at the bottom of this file pin the common `f32`/`f64` choices.

pub mod camera;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod ply;
pub mod raster;
pub mod scalar;
pub mod scenes;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Gaussian3f = gaussian::Gaussian3D<f32>;
pub type Gaussian3d = gaussian::Gaussian3D<f64>;
pub type Scenef = gaussian::GaussianScene<f32>;
pub type Scened = gaussian::GaussianScene<f64>;
pub type Cameraf = camera::Camera<f32>;
pub type Camerad = camera::Camera<f64>;
pub type Imagef = image::ImageBuffer<f32>;
pub type Imaged = image::ImageBuffer<f64>;
