use super::config::DetectorConfig;
use super::detect::BBox;
use super::model::{Architecture, DetectorModel};
use crate::error::{Error, Result};
use crate::gradcore::Var;
use crate::rng::Pcg32;
use crate::{Graph, Tensor};

/// Training image with its ground-truth objects.
#[derive(Clone, Debug)]
pub struct LabeledScene {
    pub image: Tensor,
    pub objects: Vec<(usize, BBox)>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { seed: 1, epochs: 14, lr: 0.002, batch_size: 16, momentum: 0.9 }
    }
}

const COORD_WEIGHT: f64 = 5.0;
const NOOBJ_WEIGHT: f64 = 0.5;

/// Per-box regression targets and weights, each `S x S x B x k`.
struct Targets {
    obj: Tensor,
    obj_weight: Tensor,
    xy: Tensor,
    wh: Tensor,
    coord_mask: Tensor,
    class: Tensor,
    class_mask: Tensor,
}

fn anchor_for(config: &DetectorConfig, bbox: &BBox) -> usize {
    let s = config.grid as f64;
    let gt = BBox::new(0.0, 0.0, bbox.w, bbox.h);
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &(aw, ah)) in config.anchors.iter().enumerate() {
        let iou = gt.iou(&BBox::new(0.0, 0.0, aw / s, ah / s));
        if iou > best.0 {
            best = (iou, i);
        }
    }
    best.1
}

fn build_targets(config: &DetectorConfig, objects: &[(usize, BBox)]) -> Targets {
    let (s, b, c) = (config.grid, config.boxes, config.classes);
    let sf = s as f64;
    let mut obj = vec![0.0; s * s * b];
    let mut obj_weight = vec![NOOBJ_WEIGHT; s * s * b];
    let mut xy = vec![0.0; s * s * b * 2];
    let mut wh = vec![0.0; s * s * b * 2];
    let mut coord_mask = vec![0.0; s * s * b * 2];
    let mut class = vec![0.0; s * s * b * c];
    let mut class_mask = vec![0.0; s * s * b * c];
    for &(class_id, bbox) in objects {
        let col = ((bbox.cx * sf).floor() as usize).min(s - 1);
        let row = ((bbox.cy * sf).floor() as usize).min(s - 1);
        let a = anchor_for(config, &bbox);
        let (aw, ah) = config.anchors[a];
        let slot = (row * s + col) * b + a;
        obj[slot] = 1.0;
        obj_weight[slot] = 1.0;
        xy[2 * slot] = bbox.cx * sf - col as f64;
        xy[2 * slot + 1] = bbox.cy * sf - row as f64;
        wh[2 * slot] = (bbox.w.max(1e-6) * sf / aw).ln();
        wh[2 * slot + 1] = (bbox.h.max(1e-6) * sf / ah).ln();
        coord_mask[2 * slot] = COORD_WEIGHT;
        coord_mask[2 * slot + 1] = COORD_WEIGHT;
        for y in 0..c {
            class[slot * c + y] = if y == class_id { 1.0 } else { 0.0 };
            class_mask[slot * c + y] = 1.0;
        }
    }
    let t = |k: usize, v: Vec<f64>| Tensor::new([s, s, b, k], v).expect("target shape");
    Targets {
        obj: t(1, obj),
        obj_weight: t(1, obj_weight),
        xy: t(2, xy),
        wh: t(2, wh),
        coord_mask: t(2, coord_mask),
        class: t(c, class),
        class_mask: t(c, class_mask),
    }
}

fn weighted_sse(g: &mut Graph, pred: Var, target: Tensor, weight: Tensor) -> Result<Var> {
    let t = g.constant(target);
    let w = g.constant(weight);
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let wsq = g.mul(sq, w)?;
    Ok(g.sum(wsq))
}

/// Composite single-shot loss for one scene: weighted squared error on
/// objectness (no-object boxes at 0.5), coordinates of the responsible
/// anchor (x5), and its class distribution.
pub fn detection_loss(g: &mut Graph, config: &DetectorConfig, raw: Var, objects: &[(usize, BBox)]) -> Result<Var> {
    let (s, b, c) = (config.grid, config.boxes, config.classes);
    let targets = build_targets(config, objects);
    let boxes = g.reshape(raw, &[s, s, b, config.box_len()])?;
    let t_obj = g.slice(boxes, 3, 0, 1)?;
    let t_xy = g.slice(boxes, 3, 1, 2)?;
    let t_wh = g.slice(boxes, 3, 3, 2)?;
    let logits = g.slice(boxes, 3, 5, c)?;
    let obj = g.sigmoid(t_obj);
    let xy = g.sigmoid(t_xy);
    let probs = g.softmax(logits);

    let l_obj = weighted_sse(g, obj, targets.obj, targets.obj_weight)?;
    let l_xy = weighted_sse(g, xy, targets.xy, targets.coord_mask.clone())?;
    let l_wh = weighted_sse(g, t_wh, targets.wh, targets.coord_mask)?;
    let l_cls = weighted_sse(g, probs, targets.class, targets.class_mask)?;
    let l = g.add(l_obj, l_xy)?;
    let l = g.add(l, l_wh)?;
    g.add(l, l_cls)
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Mean per-scene loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a detector from a seeded initialisation with minibatch SGD.
/// Deterministic for a fixed seed and dataset.
pub fn train_toy(
    config: &DetectorConfig,
    arch: &Architecture,
    dataset: &[LabeledScene],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(DetectorModel, TrainReport)> {
    let mut model = DetectorModel::init(config.clone(), arch.clone(), options.seed)?;
    let mut report = TrainReport::default();
    if options.epochs == 0 {
        return Ok((model, report));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if options.batch_size == 0 || !(options.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    for y in 0..config.classes {
        if !dataset.iter().any(|s| s.objects.iter().any(|&(c, _)| c == y)) {
            return Err(Error::invalid(format!("class {y} has no training example")));
        }
    }

    let mut rng = Pcg32::new(options.seed, 0x747261696e);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut velocity: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    for epoch in 0..options.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(options.batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
            for &i in batch {
                let scene = &dataset[i];
                let mut g = Graph::new();
                let w = model.bind(&mut g, true);
                let x = g.constant(scene.image.clone());
                let raw = model.forward_graph(&mut g, x, &w)?;
                let loss = detection_loss(&mut g, config, raw, &scene.objects)?;
                let lv = g.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {lv} at epoch {epoch}, step {step}, scene {i}"
                    )));
                }
                epoch_loss += lv;
                let grad = g.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&w) {
                    if let Some(gv) = grad.get(v) {
                        for (a, &d) in acc.iter_mut().zip(gv.data()) {
                            *a += d;
                        }
                    }
                }
            }
            let scale = options.lr / batch.len() as f64;
            for ((weight, grad), vel) in model.weights.iter_mut().zip(&grads).zip(&mut velocity) {
                for ((wv, &gv), v) in weight.data_mut().iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = options.momentum * *v + scale * gv;
                    *wv -= *v;
                }
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_returns_init() {
        let cfg = DetectorConfig::reference();
        let arch = Architecture::reference();
        let opts = TrainOptions { epochs: 0, ..TrainOptions::default() };
        let (m, report) = train_toy(&cfg, &arch, &[], &opts, |_, _| {}).unwrap();
        assert_eq!(m, DetectorModel::init(cfg, arch, opts.seed).unwrap());
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn responsible_anchor_matches_shape() {
        let cfg = DetectorConfig::reference();
        assert_eq!(anchor_for(&cfg, &BBox::new(0.5, 0.5, 0.12, 0.12)), 0);
        assert_eq!(anchor_for(&cfg, &BBox::new(0.5, 0.5, 0.4, 0.4)), 1);
    }

    #[test]
    fn loss_is_zero_free_of_objects_only_for_zero_objectness() {
        let cfg = DetectorConfig::reference();
        let mut raw = vec![0.0; 7 * 7 * 18];
        for (i, v) in raw.iter_mut().enumerate() {
            if i % 9 == 0 {
                *v = -60.0;
            }
        }
        let mut g = Graph::new();
        let r = g.constant(Tensor::new([7, 7, 18], raw).unwrap());
        let l = detection_loss(&mut g, &cfg, r, &[]).unwrap();
        assert!(g.value(l).item() < 1e-20);
    }

    #[test]
    fn missing_class_is_rejected() {
        let cfg = DetectorConfig::reference();
        let scene =
            LabeledScene { image: Tensor::zeros([112, 112, 3]), objects: vec![(0, BBox::new(0.5, 0.5, 0.2, 0.2))] };
        let opts = TrainOptions { epochs: 1, ..TrainOptions::default() };
        assert!(train_toy(&cfg, &Architecture::reference(), &[scene], &opts, |_, _| {}).is_err());
    }
}
