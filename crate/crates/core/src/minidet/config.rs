use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid/anchor layout of a single-shot detector. The raw output is
/// `grid x grid x boxes*(5 + classes)`, each box laid out as
/// `(objectness, x, y, w, h, class logits...)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Cells per side (S).
    pub grid: usize,
    /// Boxes per cell (B).
    pub boxes: usize,
    /// Class count (C).
    pub classes: usize,
    /// Input image side in pixels.
    pub input_size: usize,
    /// Anchor `(w, h)` per box slot, in cell units.
    pub anchors: Vec<(f64, f64)>,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::reference()
    }
}

impl DetectorConfig {
    /// The toy 7x7 grid, 2 anchors, 4 classes on 112x112 inputs.
    pub fn reference() -> Self {
        DetectorConfig {
            grid: 7,
            boxes: 2,
            classes: 4,
            input_size: 112,
            anchors: vec![(1.0, 1.0), (2.5, 2.5)],
            score_threshold: 0.1,
            nms_iou_threshold: 0.45,
        }
    }

    /// YOLO v2 (COCO) layout: 19x19 grid, 5 anchors, 80 classes, 608 px input.
    pub fn full_scale() -> Self {
        DetectorConfig {
            grid: 19,
            boxes: 5,
            classes: 80,
            input_size: 608,
            anchors: vec![
                (0.57273, 0.677385),
                (1.87446, 2.06253),
                (3.33843, 5.47434),
                (7.88282, 3.52778),
                (9.77052, 9.16828),
            ],
            score_threshold: 0.1,
            nms_iou_threshold: 0.45,
        }
    }

    /// Values per box: objectness, 4 geometry terms, class logits.
    pub fn box_len(&self) -> usize {
        5 + self.classes
    }

    pub fn channels(&self) -> usize {
        self.boxes * self.box_len()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.grid, self.grid, self.channels()]
    }

    /// Pixels per grid cell.
    pub fn cell_size(&self) -> usize {
        self.input_size / self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("/detector/{field}"), msg));
        if self.grid == 0 {
            return bad("grid", "must be positive".into());
        }
        if self.boxes == 0 {
            return bad("boxes", "must be positive".into());
        }
        if self.classes == 0 {
            return bad("classes", "must be positive".into());
        }
        if self.input_size == 0 || self.input_size % self.grid != 0 {
            return bad("input_size", format!("{} is not divisible by grid {}", self.input_size, self.grid));
        }
        if self.anchors.len() != self.boxes {
            return bad("anchors", format!("{} anchors for {} boxes", self.anchors.len(), self.boxes));
        }
        if self.anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
            return bad("anchors", "anchor sizes must be positive".into());
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return bad("score_threshold", format!("{} outside (0, 1)", self.score_threshold));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return bad("nms_iou_threshold", format!("{} outside (0, 1)", self.nms_iou_threshold));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes() {
        assert_eq!(DetectorConfig::full_scale().output_shape(), [19, 19, 425]);
        assert_eq!(DetectorConfig::reference().output_shape(), [7, 7, 18]);
        assert_eq!(DetectorConfig::reference().cell_size(), 16);
    }

    #[test]
    fn threshold_out_of_range_names_field() {
        let c = DetectorConfig { score_threshold: 1.5, ..DetectorConfig::reference() };
        match c.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "/detector/score_threshold"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
