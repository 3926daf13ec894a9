use super::report::{EvalKind, EvalReport, FrameRecord, TransferReport};
use crate::attack::PerturbationSpec;
use crate::error::{Error, Result};
use crate::minidet::{detect, Detection, DetectorModel};
use crate::scenegen::{render_sweep, BackgroundSet, CanonicalObject, Environment, Frame, SweepSpec};
use crate::Tensor;

/// Worker count for frame evaluation: `SIGNFORGE_THREADS` if set and
/// positive, else the available parallelism.
pub fn eval_threads() -> usize {
    std::env::var("SIGNFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Detections for every image, in input order.
pub fn detect_all(model: &DetectorModel, images: &[&Tensor], threads: usize) -> Result<Vec<Vec<Detection>>> {
    let threads = threads.clamp(1, images.len().max(1));
    if threads == 1 {
        return images.iter().map(|im| detect(model, im)).collect();
    }
    let chunk = images.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = images
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|im| detect(model, im)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

fn evaluate(
    model: &DetectorModel,
    frames: &[Frame],
    target_class: usize,
    kind: EvalKind,
    environment: Option<Environment>,
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(Error::invalid("evaluation needs at least one frame"));
    }
    if target_class >= model.config.classes {
        return Err(Error::IndexOutOfRange(format!("target class {target_class} of {}", model.config.classes)));
    }
    let images: Vec<&Tensor> = frames.iter().map(|f| &f.image).collect();
    let detections = detect_all(model, &images, eval_threads())?;
    let records = frames
        .iter()
        .zip(detections)
        .map(|(f, d)| FrameRecord {
            frame: f.index,
            target_detected: d.iter().any(|x| x.class_id == target_class),
            detections: d,
        })
        .collect();
    Ok(EvalReport::from_records(kind, environment, model.tag(), target_class, records))
}

/// A frame succeeds when no detection of `target_class` survives NMS.
pub fn eval_disappearance(
    model: &DetectorModel,
    frames: &[Frame],
    target_class: usize,
    environment: Option<Environment>,
) -> Result<EvalReport> {
    evaluate(model, frames, target_class, EvalKind::Disappearance, environment)
}

/// A frame succeeds when at least one detection of `target_class` appears.
pub fn eval_creation(model: &DetectorModel, frames: &[Frame], target_class: usize) -> Result<EvalReport> {
    evaluate(model, frames, target_class, EvalKind::Creation, None)
}

/// Renders one sweep and evaluates it with both detectors.
#[allow(clippy::too_many_arguments)]
pub fn eval_transfer(
    pert: Option<&PerturbationSpec>,
    source: &DetectorModel,
    target: &DetectorModel,
    backgrounds: &BackgroundSet,
    object: &CanonicalObject,
    sweep: &SweepSpec,
    seed: u64,
    target_class: usize,
) -> Result<TransferReport> {
    if source.tag() == target.tag() {
        return Err(Error::invalid(format!("transfer needs two different detectors, both are {}", source.tag())));
    }
    let frames = render_sweep(backgrounds, object, pert, sweep, seed)?;
    let env = Some(sweep.environment);
    Ok(TransferReport {
        source: eval_disappearance(source, &frames, target_class, env)?,
        target: eval_disappearance(target, &frames, target_class, env)?,
    })
}
