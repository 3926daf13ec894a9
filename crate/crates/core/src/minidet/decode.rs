use super::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::gradcore::Var;
use crate::{Graph, Tensor};

/// Decoded per-box fields as graph nodes. Box-shaped fields are
/// `S x S x B x 1`; `class_probs` is `S x S x B x C`.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
    pub objectness: Var,
    pub class_probs: Var,
    pub center_x: Var,
    pub center_y: Var,
    pub width: Var,
    pub height: Var,
}

/// Plain-value snapshot of [`Decoded`].
#[derive(Clone, Debug)]
pub struct DecodedValues {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
    pub objectness: Tensor,
    pub class_probs: Tensor,
    pub center_x: Tensor,
    pub center_y: Tensor,
    pub width: Tensor,
    pub height: Tensor,
}

/// How a class "probability" is read out of a box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassScore {
    /// objectness x conditional class probability (the detector's own score).
    #[default]
    Joint,
    /// conditional class probability only.
    Conditional,
}

/// objectness = sigmoid(t_o); classes = softmax over the C logits;
/// centre = (sigmoid(t_x) + col) / S, (sigmoid(t_y) + row) / S;
/// size = anchor * exp(t_w) / S, anchor * exp(t_h) / S.
pub fn decode(g: &mut Graph, config: &DetectorConfig, raw: Var) -> Result<Decoded> {
    let (s, b, c) = (config.grid, config.boxes, config.classes);
    if g.shape(raw) != config.output_shape() {
        return Err(Error::shape(format!(
            "decode expects raw output {:?}, got {:?}",
            config.output_shape(),
            g.shape(raw)
        )));
    }
    let boxes = g.reshape(raw, &[s, s, b, config.box_len()])?;
    let t_obj = g.slice(boxes, 3, 0, 1)?;
    let t_x = g.slice(boxes, 3, 1, 1)?;
    let t_y = g.slice(boxes, 3, 2, 1)?;
    let t_w = g.slice(boxes, 3, 3, 1)?;
    let t_h = g.slice(boxes, 3, 4, 1)?;
    let logits = g.slice(boxes, 3, 5, c)?;

    let objectness = g.sigmoid(t_obj);
    let class_probs = g.softmax(logits);

    let inv_s = 1.0 / s as f64;
    let cols = g.constant(Tensor::from_fn([s, s, b, 1], |i| i[1] as f64));
    let rows = g.constant(Tensor::from_fn([s, s, b, 1], |i| i[0] as f64));
    let anchor_w = g.constant(Tensor::from_fn([s, s, b, 1], |i| config.anchors[i[2]].0));
    let anchor_h = g.constant(Tensor::from_fn([s, s, b, 1], |i| config.anchors[i[2]].1));

    let sx = g.sigmoid(t_x);
    let sx = g.add(sx, cols)?;
    let center_x = g.scale(sx, inv_s);
    let sy = g.sigmoid(t_y);
    let sy = g.add(sy, rows)?;
    let center_y = g.scale(sy, inv_s);
    let ew = g.exp(t_w);
    let ew = g.mul(ew, anchor_w)?;
    let width = g.scale(ew, inv_s);
    let eh = g.exp(t_h);
    let eh = g.mul(eh, anchor_h)?;
    let height = g.scale(eh, inv_s);

    Ok(Decoded { grid: s, boxes: b, classes: c, objectness, class_probs, center_x, center_y, width, height })
}

impl Decoded {
    pub fn values(&self, g: &Graph) -> DecodedValues {
        DecodedValues {
            grid: self.grid,
            boxes: self.boxes,
            classes: self.classes,
            objectness: g.value(self.objectness).clone(),
            class_probs: g.value(self.class_probs).clone(),
            center_x: g.value(self.center_x).clone(),
            center_y: g.value(self.center_y).clone(),
            width: g.value(self.width).clone(),
            height: g.value(self.height).clone(),
        }
    }

    fn check(&self, cell: (usize, usize), b: usize, class: Option<usize>) -> Result<()> {
        if cell.0 >= self.grid || cell.1 >= self.grid || b >= self.boxes || class.is_some_and(|y| y >= self.classes) {
            return Err(Error::IndexOutOfRange(format!(
                "cell {cell:?}, box {b}, class {class:?} outside grid {}x{}, {} boxes, {} classes",
                self.grid, self.grid, self.boxes, self.classes
            )));
        }
        Ok(())
    }

    /// Box confidence (objectness) of box `b` in `cell = (row, col)`.
    pub fn box_conf(&self, g: &mut Graph, cell: (usize, usize), b: usize) -> Result<Var> {
        self.check(cell, b, None)?;
        g.select(self.objectness, &[cell.0, cell.1, b, 0])
    }

    /// Conditional probability of `class` given an object in box `b`.
    pub fn class_prob_conditional(&self, g: &mut Graph, cell: (usize, usize), b: usize, class: usize) -> Result<Var> {
        self.check(cell, b, Some(class))?;
        g.select(self.class_probs, &[cell.0, cell.1, b, class])
    }

    /// Detection score `objectness x P(class | object)` of one box.
    pub fn class_prob(&self, g: &mut Graph, cell: (usize, usize), b: usize, class: usize) -> Result<Var> {
        let obj = self.box_conf(g, cell, b)?;
        let p = self.class_prob_conditional(g, cell, b, class)?;
        g.mul(obj, p)
    }

    pub fn class_prob_with(
        &self,
        g: &mut Graph,
        mode: ClassScore,
        cell: (usize, usize),
        b: usize,
        class: usize,
    ) -> Result<Var> {
        match mode {
            ClassScore::Joint => self.class_prob(g, cell, b, class),
            ClassScore::Conditional => self.class_prob_conditional(g, cell, b, class),
        }
    }

    /// `S x S x B x 1` map of per-box scores for `class`.
    pub fn class_score_map(&self, g: &mut Graph, mode: ClassScore, class: usize) -> Result<Var> {
        if class >= self.classes {
            return Err(Error::IndexOutOfRange(format!("class {class} of {}", self.classes)));
        }
        let p = g.slice(self.class_probs, 3, class, 1)?;
        match mode {
            ClassScore::Joint => g.mul(self.objectness, p),
            ClassScore::Conditional => Ok(p),
        }
    }
}

impl DecodedValues {
    fn at(t: &Tensor, cell: (usize, usize), b: usize) -> f64 {
        t.get(&[cell.0, cell.1, b, 0]).expect("index validated by caller")
    }

    pub fn objectness_at(&self, cell: (usize, usize), b: usize) -> f64 {
        Self::at(&self.objectness, cell, b)
    }

    pub fn class_prob_at(&self, cell: (usize, usize), b: usize, class: usize) -> f64 {
        self.class_probs.get(&[cell.0, cell.1, b, class]).expect("index validated by caller")
    }

    /// `(cx, cy, w, h)` in normalised image coordinates.
    pub fn box_at(&self, cell: (usize, usize), b: usize) -> [f64; 4] {
        [
            Self::at(&self.center_x, cell, b),
            Self::at(&self.center_y, cell, b),
            Self::at(&self.width, cell, b),
            Self::at(&self.height, cell, b),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_decode_to_cell_centres_and_anchors() {
        let cfg = DetectorConfig::reference();
        let mut g = Graph::new();
        let raw = g.constant(Tensor::zeros(cfg.output_shape()));
        let d = decode(&mut g, &cfg, raw).unwrap();
        let v = d.values(&g);
        assert_eq!(v.objectness_at((2, 3), 1), 0.5);
        assert_eq!(v.class_prob_at((2, 3), 1, 2), 0.25);
        let [cx, cy, w, h] = v.box_at((2, 3), 1);
        assert!((cx - 3.5 / 7.0).abs() < 1e-15 && (cy - 2.5 / 7.0).abs() < 1e-15);
        assert!((w - 2.5 / 7.0).abs() < 1e-15 && (h - 2.5 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn joint_score_is_product() {
        let cfg = DetectorConfig::reference();
        let mut g = Graph::new();
        let raw =
            g.constant(Tensor::from_fn(cfg.output_shape(), |i| ((i[0] * 7 + i[1]) as f64 * 0.37 + i[2] as f64).sin()));
        let d = decode(&mut g, &cfg, raw).unwrap();
        let joint = d.class_prob(&mut g, (4, 1), 0, 3).unwrap();
        let obj = d.box_conf(&mut g, (4, 1), 0).unwrap();
        let cond = d.class_prob_conditional(&mut g, (4, 1), 0, 3).unwrap();
        assert_eq!(g.value(joint).item(), g.value(obj).item() * g.value(cond).item());
        assert!(d.box_conf(&mut g, (7, 0), 0).is_err());
        let map = d.class_score_map(&mut g, ClassScore::Joint, 3).unwrap();
        assert_eq!(g.value(map).get(&[4, 1, 0, 0]).unwrap(), g.value(joint).item());
    }

    #[test]
    fn wrong_raw_shape_is_rejected() {
        let cfg = DetectorConfig::reference();
        let mut g = Graph::new();
        let raw = g.constant(Tensor::zeros([7, 7, 17]));
        assert!(decode(&mut g, &cfg, raw).is_err());
    }
}
