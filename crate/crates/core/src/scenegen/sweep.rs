use serde::{Deserialize, Serialize};

use super::background::BackgroundSet;
use super::compose::Placement;
use super::shapes::CanonicalObject;
use super::transform::{sample_transform, SceneDistribution, TransformSample};
use crate::attack::PerturbationSpec;
use crate::error::{Error, Result};
use crate::rng::Pcg32;
use crate::Tensor;

/// Stream base for per-frame generators: frame `k` uses `FRAME_STREAM + k`.
pub const FRAME_STREAM: u64 = 0x7377_0000_0000;
const SWEEP_STREAM: u64 = 0x7377_ffff_0000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Environment {
    #[default]
    IndoorAnalog,
    OutdoorAnalog,
}

impl Environment {
    pub fn tag(self) -> &'static str {
        match self {
            Environment::IndoorAnalog => "indoor-analog",
            Environment::OutdoorAnalog => "outdoor-analog",
        }
    }

    pub fn sweep(self) -> SweepSpec {
        match self {
            Environment::IndoorAnalog => SweepSpec::indoor(),
            Environment::OutdoorAnalog => SweepSpec::outdoor(),
        }
    }
}

/// A simulated approach video: the object grows geometrically from `s_far`
/// to `s_near` while drifting sideways, with per-frame jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub n_frames: usize,
    pub s_far: f64,
    pub s_near: f64,
    /// Horizontal offset reached at the last frame (normalised), growing with progress squared.
    pub lateral_drift: f64,
    pub rotation_jitter_deg: f64,
    pub position_jitter: f64,
    pub gain: [f64; 2],
    pub environment: Environment,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec::indoor()
    }
}

impl SweepSpec {
    pub fn indoor() -> Self {
        SweepSpec {
            n_frames: 60,
            s_far: 0.08,
            s_near: 0.6,
            lateral_drift: 0.0,
            rotation_jitter_deg: 5.0,
            position_jitter: 0.03,
            gain: [0.9, 1.1],
            environment: Environment::IndoorAnalog,
        }
    }

    pub fn outdoor() -> Self {
        SweepSpec {
            n_frames: 60,
            s_far: 0.08,
            s_near: 0.6,
            lateral_drift: 0.35,
            rotation_jitter_deg: 25.0,
            position_jitter: 0.06,
            gain: [0.6, 1.4],
            environment: Environment::OutdoorAnalog,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let err = |field: &str, msg: &str| Err(Error::config(format!("{path}/{field}"), msg.to_string()));
        if self.n_frames == 0 {
            return err("n_frames", "need at least one frame");
        }
        if !(self.s_far > 0.0 && self.s_far <= 1.0) {
            return err("s_far", "must lie in (0, 1]");
        }
        if !(self.s_near > 0.0 && self.s_near <= 1.0) {
            return err("s_near", "must lie in (0, 1]");
        }
        if !(self.rotation_jitter_deg >= 0.0 && self.position_jitter >= 0.0 && self.lateral_drift.is_finite()) {
            return err("rotation_jitter_deg", "jitter must be non-negative");
        }
        if !(self.gain[0] > 0.0 && self.gain[0] <= self.gain[1]) {
            return err("gain", "gain range must be positive and non-empty");
        }
        Ok(())
    }

    /// Scale of frame `k`: geometric interpolation from `s_far` to `s_near`.
    pub fn scale_at(&self, k: usize) -> f64 {
        if self.n_frames <= 1 {
            return self.s_far;
        }
        let p = k as f64 / (self.n_frames - 1) as f64;
        self.s_far * (self.s_near / self.s_far).powf(p)
    }
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub image: Tensor,
    pub transform: TransformSample,
    pub gain: f64,
}

fn frame_transform(sweep: &SweepSpec, k: usize, drift_sign: f64, seed: u64) -> (TransformSample, f64) {
    let mut rng = Pcg32::derive(seed, FRAME_STREAM, k as u64);
    let p = if sweep.n_frames <= 1 { 0.0 } else { k as f64 / (sweep.n_frames - 1) as f64 };
    let rotation_deg = rng.uniform(-sweep.rotation_jitter_deg, sweep.rotation_jitter_deg);
    let jx = rng.uniform(-sweep.position_jitter, sweep.position_jitter);
    let jy = rng.uniform(-sweep.position_jitter, sweep.position_jitter);
    let gain = rng.uniform(sweep.gain[0], sweep.gain[1]);
    let t = TransformSample {
        rotation_deg,
        translate: (drift_sign * sweep.lateral_drift * p * p + jx, jy),
        scale: sweep.scale_at(k),
    };
    (t, gain)
}

/// Renders a sweep over one background drawn from `backgrounds`. Frame `k`
/// depends only on `(seed, k)` and the inputs.
pub fn render_sweep(
    backgrounds: &BackgroundSet,
    object: &CanonicalObject,
    pert: Option<&PerturbationSpec>,
    sweep: &SweepSpec,
    seed: u64,
) -> Result<Vec<Frame>> {
    sweep.validate("/sweep")?;
    let n = object.size();
    let mut rng = Pcg32::new(seed, SWEEP_STREAM);
    let background = backgrounds.get(rng.below(backgrounds.count as u32) as usize, n);
    let drift_sign = if rng.next_u32() & 1 == 0 { 1.0 } else { -1.0 };
    let surface = match pert {
        Some(p) => p.apply_to(&object.image)?,
        None => object.image.clone(),
    };
    (0..sweep.n_frames)
        .map(|k| {
            let (t, gain) = frame_transform(sweep, k, drift_sign, seed);
            let image = Placement::new(&background, object, &t, gain)?.composite(&surface)?;
            Ok(Frame { index: k, image, transform: t, gain })
        })
        .collect()
}

/// Independent random placements (fresh background, pose and gain per frame),
/// e.g. for evaluating a free-standing patch.
pub fn render_placements(
    backgrounds: &BackgroundSet,
    object: &CanonicalObject,
    pert: Option<&PerturbationSpec>,
    dist: &SceneDistribution,
    n_frames: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    let n = object.size();
    let surface = match pert {
        Some(p) => p.apply_to(&object.image)?,
        None => object.image.clone(),
    };
    (0..n_frames)
        .map(|k| {
            let mut rng = Pcg32::derive(seed, FRAME_STREAM, k as u64);
            let bg = backgrounds.get(rng.below(backgrounds.count as u32) as usize, n);
            let t = sample_transform(dist, &mut rng);
            let gain = dist.sample_gain(&mut rng);
            let image = Placement::new(&bg, object, &t, gain)?.composite(&surface)?;
            Ok(Frame { index: k, image, transform: t, gain })
        })
        .collect()
}

/// Backgrounds alone, one per frame, for false-positive baselines.
pub fn render_backgrounds(backgrounds: &BackgroundSet, n: usize, n_frames: usize, seed: u64) -> Vec<Frame> {
    (0..n_frames)
        .map(|k| {
            let mut rng = Pcg32::derive(seed, FRAME_STREAM, k as u64);
            let image = backgrounds.get(rng.below(backgrounds.count as u32) as usize, n);
            Frame { index: k, image, transform: TransformSample::IDENTITY, gain: 1.0 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_still_frame_is_at_far_scale() {
        let sweep = SweepSpec {
            n_frames: 1,
            rotation_jitter_deg: 0.0,
            position_jitter: 0.0,
            gain: [1.0, 1.0],
            ..SweepSpec::indoor()
        };
        let obj = CanonicalObject::stop_sign(32);
        let frames = render_sweep(&BackgroundSet::new(1, 4), &obj, None, &sweep, 3).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].transform, TransformSample { rotation_deg: 0.0, translate: (0.0, 0.0), scale: 0.08 });
    }

    #[test]
    fn scale_ramp_is_geometric() {
        let s = SweepSpec { n_frames: 3, s_far: 0.1, s_near: 0.4, ..SweepSpec::indoor() };
        assert!((s.scale_at(1) - 0.2).abs() < 1e-15);
        assert!((s.scale_at(2) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn frames_depend_only_on_seed_and_index() {
        let obj = CanonicalObject::stop_sign(32);
        let bgs = BackgroundSet::new(2, 8);
        let a = render_sweep(&bgs, &obj, None, &SweepSpec { n_frames: 5, ..SweepSpec::outdoor() }, 11).unwrap();
        let b = render_sweep(&bgs, &obj, None, &SweepSpec { n_frames: 5, ..SweepSpec::outdoor() }, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
        }
        assert!(SweepSpec { n_frames: 0, ..SweepSpec::indoor() }.validate("/sweep").is_err());
    }
}
