//! Toy single-shot detector honouring the YOLO v2 output contract: an
//! `S x S` grid, `B` anchor boxes per cell, each box carrying objectness,
//! four geometry terms and `C` class logits.

mod config;
mod decode;
mod detect;
mod model;
mod train;

pub use config::DetectorConfig;
pub use decode::{decode, ClassScore, Decoded, DecodedValues};
pub use detect::{candidates, check_iou_threshold, decode_values, detect, detections_from_raw, nms, BBox, Detection};
pub(crate) use model::Reader;
pub use model::{Architecture, DetectorModel, LEAKY_SLOPE};
pub use train::{detection_loss, train_toy, LabeledScene, TrainOptions, TrainReport};

/// Class ids of the toy detector.
pub mod classes {
    pub const STOP: usize = 0;
    pub const CIRCLE: usize = 1;
    pub const TRIANGLE: usize = 2;
    pub const RECTANGLE: usize = 3;
    pub const NAMES: [&str; 4] = ["stop", "circle", "triangle", "rectangle"];
}
