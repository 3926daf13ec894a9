use serde::{Deserialize, Serialize};

use super::config::{AttackConfig, InitMode};
use super::losses::{candidate_cells, loss_creation, loss_disappearance, nps_graph, tv_norm_graph};
use super::perturbation::{MaskShape, PerturbationSpec};
use crate::error::{Error, Result};
use crate::gradcore::Var;
use crate::minidet::{decode, DetectorModel};
use crate::rng::Pcg32;
use crate::scenegen::{sample_transform, CanonicalObject, Placement, SceneDistribution};
use crate::{Graph, Tensor};

/// Stream base for per-epoch transform batches: epoch `e` uses `ATTACK_STREAM + e`.
pub const ATTACK_STREAM: u64 = 0x6174_0000_0000;
/// Stream of the placements that score candidate starting colours.
pub const INIT_STREAM: u64 = 0x6174_ffff_0000;

/// Per-epoch loss terms (already weighted).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub j: f64,
    pub tv: f64,
    pub nps: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub spec: PerturbationSpec,
    pub trace: Vec<TraceRow>,
}

/// Graph nodes of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    pub total: Var,
    /// Batch mean of the per-scene attack loss.
    pub j: Var,
    pub tv: Option<Var>,
    pub nps: Option<Var>,
}

/// What the per-scene loss is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneLoss {
    Disappearance,
    /// Candidate cells come from each placement's footprint.
    Creation,
}

/// `lambda * TV + nps_weight * NPS + mean_i loss(detector(scene_i))`, where
/// scene `i` shows `clip(object + M * delta, 0, 1)` under `placements[i]`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    g: &mut Graph,
    model: &DetectorModel,
    weights: &[Var],
    object: &CanonicalObject,
    mask: &Tensor,
    delta: Var,
    placements: &[Placement],
    config: &AttackConfig,
    loss: SceneLoss,
) -> Result<ObjectiveTerms> {
    if placements.is_empty() {
        return Err(Error::invalid("objective needs at least one scene"));
    }
    let m = g.constant(mask.clone());
    let applied = g.mul(delta, m)?;
    let base = g.constant(object.image.clone());
    let raw_surface = g.add(base, applied)?;
    let surface = g.clip(raw_surface, 0.0, 1.0);

    let mut per_scene = Vec::with_capacity(placements.len());
    for p in placements {
        let scene = p.composite_graph(g, surface)?;
        let raw = model.forward_graph(g, scene, weights)?;
        let decoded = decode(g, &model.config, raw)?;
        let l = match loss {
            SceneLoss::Disappearance => {
                loss_disappearance(g, &decoded, config.target_class, config.class_score, config.smooth_max)?
            }
            SceneLoss::Creation => {
                let footprint = p.footprint().ok_or_else(|| Error::invalid("patch placed entirely out of frame"))?;
                let cands: Vec<_> = candidate_cells(&footprint, model.config.grid)
                    .into_iter()
                    .flat_map(|(r, c)| (0..model.config.boxes).map(move |b| (r, c, b)))
                    .collect();
                loss_creation(g, &decoded, &cands, config.target_class, config.tau)?.0
            }
        };
        per_scene.push(l);
    }
    let mut sum = per_scene[0];
    for &l in &per_scene[1..] {
        sum = g.add(sum, l)?;
    }
    let j = g.scale(sum, 1.0 / placements.len() as f64);

    let mut total = j;
    let mut tv = None;
    if config.lambda > 0.0 {
        let t = tv_norm_graph(g, applied)?;
        let t = g.scale(t, config.lambda);
        total = g.add(total, t)?;
        tv = Some(t);
    }
    let mut nps = None;
    if config.nps_weight > 0.0 {
        let n = nps_graph(g, applied, mask, &config.printable)?;
        let n = g.scale(n, config.nps_weight);
        total = g.add(total, n)?;
        nps = Some(n);
    }
    Ok(ObjectiveTerms { total, j, tv, nps })
}

fn sample_placements(
    dist: &SceneDistribution,
    object: &CanonicalObject,
    batch: usize,
    rng: &mut Pcg32,
    require_inside: bool,
) -> Result<Vec<Placement>> {
    let n = object.size();
    (0..batch)
        .map(|_| {
            let bg = dist.backgrounds.get(rng.below(dist.backgrounds.count as u32) as usize, n);
            let t = sample_transform(dist, rng);
            let gain = dist.sample_gain(rng);
            let p = Placement::new(&bg, object, &t, gain)?;
            if require_inside {
                check_inside(&p, object)?;
            }
            Ok(p)
        })
        .collect()
}

fn check_inside(p: &Placement, object: &CanonicalObject) -> Result<()> {
    let n = object.size();
    let nf = n as f64;
    let a = object.alpha.data();
    let (mut r0, mut r1, mut c0, mut c1) = (n, 0, n, 0);
    for (i, &v) in a.iter().enumerate() {
        if v > 0.0 {
            r0 = r0.min(i / n);
            r1 = r1.max(i / n + 1);
            c0 = c0.min(i % n);
            c1 = c1.max(i % n + 1);
        }
    }
    let corners = [(c0, r0), (c1, r0), (c0, r1), (c1, r1)];
    for (x, y) in corners {
        let (u, v) = p.affine.apply(x as f64, y as f64);
        if !(0.0..=nf).contains(&u) || !(0.0..=nf).contains(&v) {
            return Err(Error::invalid(format!(
                "patch corner lands at ({u:.2}, {v:.2}), outside the {n}x{n} frame under {:?}",
                p.transform
            )));
        }
    }
    Ok(())
}

fn run<F>(
    model: &DetectorModel,
    object: &CanonicalObject,
    init: PerturbationSpec,
    config: &AttackConfig,
    dist: &SceneDistribution,
    epochs: usize,
    creation: bool,
    mut observer: F,
) -> Result<AttackOutcome>
where
    F: FnMut(&TraceRow, &PerturbationSpec),
{
    config.validate("/attack", model.config.classes)?;
    dist.validate("/attack/scene")?;
    if init.size() != object.size() || object.size() != model.config.input_size {
        return Err(Error::shape(format!(
            "perturbation {}, object {} and detector input {} must share one frame size",
            init.size(),
            object.size(),
            model.config.input_size
        )));
    }
    if !init.mask_within(object) {
        return Err(Error::invalid("mask extends outside the object silhouette"));
    }
    let mut spec = init;
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = Pcg32::derive(config.seed, ATTACK_STREAM, epoch as u64);
        let placements = sample_placements(dist, object, config.batch_size, &mut rng, creation)?;
        let mut g = Graph::new();
        let weights = model.bind(&mut g, false);
        let delta = g.param(spec.delta.clone());
        let loss = if creation { SceneLoss::Creation } else { SceneLoss::Disappearance };
        let terms = objective(&mut g, model, &weights, object, &spec.mask, delta, &placements, config, loss)?;
        let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        let row = TraceRow {
            epoch,
            j: value(Some(terms.j)),
            tv: value(terms.tv),
            nps: value(terms.nps),
            total: value(Some(terms.total)),
        };
        if !row.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "attack loss {} at epoch {epoch} after {} finite epochs",
                row.total,
                trace.len()
            )));
        }
        let grad = g.backward(terms.total)?.wrt(delta);
        if !grad.all_finite() {
            return Err(Error::NonFinite(format!("attack gradient at epoch {epoch}")));
        }
        let lr = config.lr;
        let gd = grad.data();
        for (d, &gv) in spec.delta.data_mut().iter_mut().zip(gd) {
            *d -= lr * gv;
        }
        spec.project(&object.image)?;
        observer(&row, &spec);
        trace.push(row);
    }
    Ok(AttackOutcome { spec, trace })
}

/// Minimises the disappearance objective over `config.scene` with plain SGD
/// and projection after every step. `observer` sees each epoch's losses and
/// the projected perturbation.
pub fn optimize_disappearance<F>(
    model: &DetectorModel,
    object: &CanonicalObject,
    init: PerturbationSpec,
    config: &AttackConfig,
    observer: F,
) -> Result<AttackOutcome>
where
    F: FnMut(&TraceRow, &PerturbationSpec),
{
    run(model, object, init, config, &config.scene, config.epochs, false, observer)
}

/// Starting perturbation for [`optimize_disappearance`] under `config.init`.
/// `BestPrintable` scores every printable colour as a solid fill of the mask
/// on `4 * batch_size` placements from `config.scene`; the lowest mean score
/// wins, earlier colours winning ties. The returned delta goes
/// `config.init_blend` of the way towards the winner.
pub fn initial_perturbation(
    model: &DetectorModel,
    object: &CanonicalObject,
    config: &AttackConfig,
) -> Result<PerturbationSpec> {
    let zero = PerturbationSpec::zeros(config.mask, object);
    if config.init == InitMode::Zero {
        return Ok(zero);
    }
    config.validate("/attack", model.config.classes)?;
    let mut rng = Pcg32::new(config.seed, INIT_STREAM);
    let placements = sample_placements(&config.scene, object, 4 * config.batch_size, &mut rng, false)?;
    let scoring = AttackConfig { lambda: 0.0, nps_weight: 0.0, ..config.clone() };
    let mut best: Option<(f64, PerturbationSpec)> = None;
    for color in config.printable.colors() {
        let mut spec = zero.clone();
        let x = object.image.data();
        let m = zero.mask.data();
        for (i, d) in spec.delta.data_mut().iter_mut().enumerate() {
            if m[i] > 0.0 {
                *d = color[i % 3] - x[i];
            }
        }
        spec.project(&object.image)?;
        let mut g = Graph::new();
        let weights = model.bind(&mut g, false);
        let delta = g.constant(spec.delta.clone());
        let terms = objective(
            &mut g,
            model,
            &weights,
            object,
            &spec.mask,
            delta,
            &placements,
            &scoring,
            SceneLoss::Disappearance,
        )?;
        let j = g.value(terms.j).item();
        if best.as_ref().map_or(true, |(b, _)| j < *b) {
            best = Some((j, spec));
        }
    }
    let mut spec = best.expect("printable set is nonempty").1;
    for d in spec.delta.data_mut() {
        *d *= config.init_blend;
    }
    spec.project(&object.image)?;
    Ok(spec)
}

/// The patch carrier (grey square labelled with the target class) for the creation attack.
pub fn creation_carrier(config: &AttackConfig, n: usize) -> Result<CanonicalObject> {
    CanonicalObject::patch(n, config.creation.patch_size, config.target_class)
}

/// Optimises a free-standing patch so the detector reports `config.target_class`
/// wherever it is placed under `config.creation.scene`.
pub fn optimize_creation<F>(model: &DetectorModel, config: &AttackConfig, observer: F) -> Result<AttackOutcome>
where
    F: FnMut(&TraceRow, &PerturbationSpec),
{
    let carrier = creation_carrier(config, model.config.input_size)?;
    let init = PerturbationSpec::zeros(MaskShape::Patch, &carrier);
    run(model, &carrier, init, config, &config.creation.scene, config.creation.epochs, true, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minidet::{Architecture, DetectorConfig};

    fn tiny() -> (DetectorModel, CanonicalObject) {
        let cfg = DetectorConfig { grid: 2, input_size: 16, ..DetectorConfig::reference() };
        let model = DetectorModel::init(cfg, Architecture { block_channels: vec![4, 4, 4] }, 5).unwrap();
        (model, CanonicalObject::stop_sign(16))
    }

    fn quick() -> AttackConfig {
        AttackConfig { epochs: 3, batch_size: 2, lr: 5.0, ..AttackConfig::default() }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (model, stop) = tiny();
        let init = PerturbationSpec::zeros(MaskShape::OctagonPoster, &stop);
        let cfg = AttackConfig { epochs: 0, ..quick() };
        let out = optimize_disappearance(&model, &stop, init.clone(), &cfg, |_, _| {}).unwrap();
        assert_eq!(out.spec, init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn runs_are_deterministic_and_stay_on_support() {
        let (model, stop) = tiny();
        let init = PerturbationSpec::zeros(MaskShape::OctagonPoster, &stop);
        let mut checked = 0;
        let a = optimize_disappearance(&model, &stop, init.clone(), &quick(), |_, spec| {
            for (&d, &m) in spec.delta.data().iter().zip(spec.mask.data()) {
                assert!(m != 0.0 || d == 0.0);
            }
            checked += 1;
        })
        .unwrap();
        let b = optimize_disappearance(&model, &stop, init, &quick(), |_, _| {}).unwrap();
        assert_eq!(checked, 3);
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.trace, b.trace);
        assert!(a.spec.delta.data().iter().any(|&d| d != 0.0));
    }

    #[test]
    fn mask_outside_object_is_rejected() {
        let (model, stop) = tiny();
        let mut init = PerturbationSpec::zeros(MaskShape::OctagonPoster, &stop);
        init.mask = Tensor::full([16, 16, 3], 1.0);
        assert!(optimize_disappearance(&model, &stop, init, &quick(), |_, _| {}).is_err());
    }

    #[test]
    fn creation_rejects_placements_leaving_the_frame() {
        let (model, _) = tiny();
        let mut cfg = quick();
        cfg.creation.patch_size = 12;
        cfg.creation.epochs = 1;
        cfg.creation.scene.translate_x = [0.45, 0.45];
        assert!(optimize_creation(&model, &cfg, |_, _| {}).is_err());
        cfg.creation.scene.translate_x = [0.0, 0.0];
        cfg.creation.scene.rotation_deg = [0.0, 0.0];
        let out = optimize_creation(&model, &cfg, |_, _| {}).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.spec.shape, MaskShape::Patch);
    }
}
