//! Physical-style adversarial perturbations against a toy single-shot detector.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradcore`]: tensors, a recorded reverse-mode graph, and finite-difference checks.
//! * [`minidet`]: a grid/anchor detector with the YOLO v2 output layout, decoding, NMS, training.
//! * [`scenegen`]: procedural signs, backgrounds, affine placement, datasets and video sweeps.
//! * [`attack`]: disappearance/creation losses, TV and NPS regularisers, the perturbation optimiser.
//! * [`evalharness`]: per-frame evaluation and success-ratio reports.
//! * [`cli`]: configuration, PPM IO and the `signforge` command pipeline.

pub mod attack;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod gradcore;
pub mod minidet;
pub mod rng;
pub mod scalar;
pub mod scenegen;

pub use error::{Error, Result};
pub use rng::Pcg32;
pub use scalar::Scalar;

/// Double-precision tensor used throughout the pipeline.
pub type Tensor = gradcore::Tensor<f64>;
pub type Tensor32 = gradcore::Tensor<f32>;
pub type Graph = gradcore::Graph<f64>;
pub type Graph32 = gradcore::Graph<f32>;
pub type Gradients = gradcore::Gradients<f64>;
