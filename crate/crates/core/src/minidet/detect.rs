use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::DetectorConfig;
use super::decode::{decode, DecodedValues};
use super::model::DetectorModel;
use crate::error::{Error, Result};
use crate::{Graph, Tensor};

/// Axis-aligned box as centre and size, normalised to the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    /// `[x0, y0, x1, y1]`.
    pub fn corners(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let [ax0, ay0, ax1, ay1] = self.corners();
        let [bx0, by0, bx1, by1] = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    /// objectness x probability of `class_id`.
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// `(row, col)` of the predicting grid cell.
    pub cell: (usize, usize),
    pub box_index: usize,
}

/// Descending score; ties broken by cell then box index.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.cell.cmp(&b.cell))
        .then(a.box_index.cmp(&b.box_index))
}

/// Greedy per-class non-max suppression. A detection survives iff its IoU with
/// every already kept detection of the same class is below `iou_threshold`.
/// Output is in rank order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept.iter().any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Boxes whose best-class score is not below the threshold (pre-NMS).
pub fn candidates(values: &DecodedValues, score_threshold: f64) -> Vec<Detection> {
    let mut out = Vec::new();
    for row in 0..values.grid {
        for col in 0..values.grid {
            for b in 0..values.boxes {
                let cell = (row, col);
                let obj = values.objectness_at(cell, b);
                let mut best = 0;
                let mut best_p = values.class_prob_at(cell, b, 0);
                for y in 1..values.classes {
                    let p = values.class_prob_at(cell, b, y);
                    if p > best_p {
                        best = y;
                        best_p = p;
                    }
                }
                let score = obj * best_p;
                if score >= score_threshold {
                    let [cx, cy, w, h] = values.box_at(cell, b);
                    out.push(Detection { class_id: best, score, bbox: BBox { cx, cy, w, h }, cell, box_index: b });
                }
            }
        }
    }
    out
}

pub fn decode_values(config: &DetectorConfig, raw: &Tensor) -> Result<DecodedValues> {
    let mut g = Graph::new();
    let r = g.constant(raw.clone());
    Ok(decode(&mut g, config, r)?.values(&g))
}

/// Threshold and suppress a raw output tensor.
pub fn detections_from_raw(config: &DetectorConfig, raw: &Tensor) -> Result<Vec<Detection>> {
    let values = decode_values(config, raw)?;
    Ok(nms(&candidates(&values, config.score_threshold), config.nms_iou_threshold))
}

/// forward -> decode -> score threshold (equality kept) -> NMS.
pub fn detect(model: &DetectorModel, image: &Tensor) -> Result<Vec<Detection>> {
    let raw = model.forward(image)?;
    detections_from_raw(&model.config, &raw)
}

/// Validates an IoU threshold for callers that take it as an argument.
pub fn check_iou_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("iou threshold {t} outside (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class_id: usize, score: f64, cx: f64, cell: (usize, usize)) -> Detection {
        Detection { class_id, score, bbox: BBox::new(cx, 0.5, 0.2, 0.2), cell, box_index: 0 }
    }

    #[test]
    fn iou_of_disjoint_and_identical_boxes() {
        let a = BBox::new(0.2, 0.2, 0.2, 0.2);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::new(0.8, 0.8, 0.2, 0.2)), 0.0);
        let half = BBox::from_corners(0.1, 0.1, 0.2, 0.3);
        assert!((a.iou(&half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nms_is_per_class() {
        let out = nms(&[det(0, 0.9, 0.5, (0, 0)), det(0, 0.8, 0.51, (0, 1)), det(1, 0.7, 0.5, (0, 2))], 0.45);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].class_id, out[1].class_id), (0, 1));
    }

    #[test]
    fn nms_ties_break_by_cell() {
        let out = nms(&[det(0, 0.5, 0.5, (3, 1)), det(0, 0.5, 0.5, (1, 2))], 0.45);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].cell, (1, 2));
    }

    #[test]
    fn boundary_score_is_kept() {
        let t = |v: f64, c: usize| Tensor::full([1, 1, 1, c], v);
        let probs = vec![0.4, 0.2, 0.2, 0.2];
        let values = DecodedValues {
            grid: 1,
            boxes: 1,
            classes: 4,
            objectness: t(0.25, 1),
            class_probs: Tensor::new([1, 1, 1, 4], probs).unwrap(),
            center_x: t(0.5, 1),
            center_y: t(0.5, 1),
            width: t(0.1, 1),
            height: t(0.1, 1),
        };
        assert_eq!(0.25 * 0.4, 0.1);
        assert_eq!(candidates(&values, 0.1).len(), 1);
        assert!(candidates(&values, 0.1 + 1e-15).is_empty());
    }
}
