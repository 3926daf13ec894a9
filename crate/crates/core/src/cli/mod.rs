//! Command-line plumbing: strict JSON run configuration, PPM image IO,
//! dataset and manifest files, and the `signforge` command pipeline.

mod artifacts;
mod commands;
mod config;
mod ppm;

pub use artifacts::{dataset_bytes, parse_dataset, read_dataset, sha256_hex, write_dataset, Manifest};
pub use commands::{run, Command, DATA_STREAM};
pub use config::{DataConfig, EvalConfig, EvalMode, Paths, RunConfig};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
