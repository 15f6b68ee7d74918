//! Waypoint-conditioned flow matching in pixel space.
//!
//! A small waypoint generator predicts PCA-compressed semantic features of
//! the clean image from the current noisy state; the pixel generator is a
//! transformer whose blocks are modulated per token by those predictions.
//! Both are trained by velocity matching on x-predictions and sampled
//! with Euler or Heun integration under classifier-free guidance.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar for the common cases: `f64` for checks,
//! `f32` for training and checkpoints.

pub mod backbone;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod nn;
pub mod sampler;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod waypoints;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type PixelGenerator32 = backbone::PixelGenerator<f32>;
pub type PixelGenerator64 = backbone::PixelGenerator<f64>;
pub type WaypointGenerator32 = waypoints::WaypointGenerator<f32>;
pub type WaypointGenerator64 = waypoints::WaypointGenerator<f64>;
pub type WaypointProjection32 = waypoints::WaypointProjection<f32>;
pub type WaypointProjection64 = waypoints::WaypointProjection<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
