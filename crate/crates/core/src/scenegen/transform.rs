use serde::{Deserialize, Serialize};

use super::background::BackgroundSet;
use crate::error::{Error, Result};
use crate::gradcore::Affine2;
use crate::rng::Pcg32;

/// One placement of an object: in-plane rotation, centre offset from the
/// image centre (normalised image units), and object size / image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSample {
    pub rotation_deg: f64,
    pub translate: (f64, f64),
    pub scale: f64,
}

impl TransformSample {
    pub const IDENTITY: TransformSample = TransformSample { rotation_deg: 0.0, translate: (0.0, 0.0), scale: 1.0 };

    /// Canonical `n x n` frame -> `n x n` scene:
    /// translate(centre + offset) . rotate . scale . translate(-centre).
    pub fn affine(&self, n: usize) -> Result<Affine2> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("scale {} must be positive", self.scale)));
        }
        let c = n as f64 / 2.0;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let s = self.scale;
        let (tx, ty) = (c + self.translate.0 * n as f64, c + self.translate.1 * n as f64);
        let a = Affine2::new([cos * s, -sin * s, tx, sin * s, cos * s, ty]).then_after(Affine2::translation(-c, -c));
        a.inverse()?;
        Ok(a)
    }
}

/// Uniform ranges for each sampled placement field, plus the background pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneDistribution {
    pub rotation_deg: [f64; 2],
    pub translate_x: [f64; 2],
    pub translate_y: [f64; 2],
    pub scale: [f64; 2],
    pub gain: [f64; 2],
    pub backgrounds: BackgroundSet,
}

impl Default for SceneDistribution {
    /// Detector training distribution.
    fn default() -> Self {
        SceneDistribution {
            rotation_deg: [-30.0, 30.0],
            translate_x: [-0.3, 0.3],
            translate_y: [-0.3, 0.3],
            scale: [0.06, 0.45],
            gain: [0.6, 1.4],
            backgrounds: BackgroundSet::new(17, 2000),
        }
    }
}

impl SceneDistribution {
    /// Every field fixed to one value.
    pub fn point(t: TransformSample, gain: f64, backgrounds: BackgroundSet) -> Self {
        SceneDistribution {
            rotation_deg: [t.rotation_deg; 2],
            translate_x: [t.translate.0; 2],
            translate_y: [t.translate.1; 2],
            scale: [t.scale; 2],
            gain: [gain; 2],
            backgrounds,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let check = |name: &str, r: [f64; 2]| -> Result<()> {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::config(format!("{path}/{name}"), format!("empty or non-finite range {r:?}")));
            }
            Ok(())
        };
        check("rotation_deg", self.rotation_deg)?;
        check("translate_x", self.translate_x)?;
        check("translate_y", self.translate_y)?;
        check("scale", self.scale)?;
        check("gain", self.gain)?;
        if !(self.scale[0] > 0.0 && self.scale[1] <= 1.0) {
            return Err(Error::config(format!("{path}/scale"), "scale range must lie in (0, 1]"));
        }
        if !(self.gain[0] > 0.0) {
            return Err(Error::config(format!("{path}/gain"), "gain must be positive"));
        }
        if self.backgrounds.count == 0 {
            return Err(Error::config(format!("{path}/backgrounds/count"), "need at least one background"));
        }
        Ok(())
    }

    pub fn sample_gain(&self, rng: &mut Pcg32) -> f64 {
        rng.uniform(self.gain[0], self.gain[1])
    }
}

/// Draws rotation, x offset, y offset and scale, in that order, each uniform
/// and independent.
pub fn sample_transform(dist: &SceneDistribution, rng: &mut Pcg32) -> TransformSample {
    let rotation_deg = rng.uniform(dist.rotation_deg[0], dist.rotation_deg[1]);
    let tx = rng.uniform(dist.translate_x[0], dist.translate_x[1]);
    let ty = rng.uniform(dist.translate_y[0], dist.translate_y[1]);
    let scale = rng.uniform(dist.scale[0], dist.scale[1]);
    TransformSample { rotation_deg, translate: (tx, ty), scale }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sample_gives_identity_affine() {
        assert_eq!(TransformSample::IDENTITY.affine(64).unwrap(), Affine2::IDENTITY);
    }

    #[test]
    fn centre_maps_to_offset_centre() {
        let t = TransformSample { rotation_deg: 40.0, translate: (0.25, -0.125), scale: 0.5 };
        let (x, y) = t.affine(64).unwrap().apply(32.0, 32.0);
        assert!((x - 48.0).abs() < 1e-12 && (y - 24.0).abs() < 1e-12);
    }

    #[test]
    fn point_distribution_is_exact() {
        let t = TransformSample { rotation_deg: 12.5, translate: (0.1, 0.2), scale: 0.3 };
        let d = SceneDistribution::point(t, 1.1, BackgroundSet::default());
        let mut rng = Pcg32::seeded(9);
        assert_eq!(sample_transform(&d, &mut rng), t);
        assert_eq!(d.sample_gain(&mut rng), 1.1);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let d = SceneDistribution { scale: [0.5, 1.5], ..SceneDistribution::default() };
        assert!(d.validate("/data/scene").is_err());
        let d = SceneDistribution { rotation_deg: [10.0, -10.0], ..SceneDistribution::default() };
        assert!(matches!(d.validate("/x"), Err(Error::Config { path, .. }) if path == "/x/rotation_deg"));
        let t = TransformSample { scale: 0.0, ..TransformSample::IDENTITY };
        assert!(t.affine(8).is_err());
    }
}
