//! Synthetic scenes: canonical signs, procedural backgrounds, affine
//! placement shared by objects and their perturbations, labelled datasets
//! and simulated approach sweeps.

mod background;
mod compose;
mod dataset;
mod shapes;
mod sweep;
mod transform;

pub use background::BackgroundSet;
pub use compose::{align_perturbation, alpha_bbox, compose_scene, Placement};
pub use dataset::synth_dataset;
pub use shapes::{stop_sign_contains, CanonicalObject};
pub use sweep::{render_backgrounds, render_placements, render_sweep, Environment, Frame, SweepSpec, FRAME_STREAM};
pub use transform::{sample_transform, SceneDistribution, TransformSample};
