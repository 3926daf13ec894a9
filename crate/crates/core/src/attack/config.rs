use serde::{Deserialize, Serialize};

use super::perturbation::{MaskShape, PrintableSet};
use crate::error::{Error, Result};
use crate::minidet::{classes, ClassScore};
use crate::scenegen::{BackgroundSet, SceneDistribution};

/// Free-standing patch settings for the creation attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreationOptions {
    /// Side of the square patch in canonical-frame pixels.
    pub patch_size: usize,
    pub epochs: usize,
    /// Placement distribution; scale is relative to the canonical frame, so
    /// scale 1 renders the patch at `patch_size` pixels.
    pub scene: SceneDistribution,
}

impl Default for CreationOptions {
    fn default() -> Self {
        CreationOptions {
            patch_size: 32,
            epochs: 800,
            scene: SceneDistribution {
                rotation_deg: [-20.0, 20.0],
                translate_x: [-0.25, 0.25],
                translate_y: [-0.25, 0.25],
                scale: [0.8, 1.0],
                gain: [0.8, 1.2],
                backgrounds: BackgroundSet::new(29, 512),
            },
        }
    }
}

/// Starting point of the disappearance perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// `delta = 0`.
    Zero,
    /// The masked region filled with whichever printable colour scores lowest
    /// on a seeded batch of training placements.
    #[default]
    BestPrintable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// TV weight.
    pub lambda: f64,
    pub nps_weight: f64,
    /// Box-confidence threshold separating the two creation phases.
    pub tau: f64,
    pub target_class: usize,
    pub epochs: usize,
    /// Transform samples per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mask: MaskShape,
    pub init: InitMode,
    /// Fraction of the way from the clean sign to the chosen colour at the start.
    pub init_blend: f64,
    pub class_score: ClassScore,
    /// Replace the hard max with a log-sum-exp at this temperature.
    pub smooth_max: Option<f64>,
    /// Poses the disappearance attack trains over.
    pub scene: SceneDistribution,
    pub printable: PrintableSet,
    pub creation: CreationOptions,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            lambda: 1e-4,
            nps_weight: 0.0,
            tau: 0.2,
            target_class: classes::STOP,
            epochs: 500,
            batch_size: 8,
            lr: 50.0,
            seed: 1,
            mask: MaskShape::TwoBarSticker,
            init: InitMode::BestPrintable,
            init_blend: 0.3,
            class_score: ClassScore::Joint,
            smooth_max: None,
            scene: SceneDistribution {
                rotation_deg: [-5.0, 5.0],
                translate_x: [-0.1, 0.1],
                translate_y: [-0.1, 0.1],
                scale: [0.2, 0.6],
                gain: [0.9, 1.1],
                backgrounds: BackgroundSet::new(23, 512),
            },
            printable: PrintableSet::default(),
            creation: CreationOptions::default(),
        }
    }
}

impl AttackConfig {
    /// Checks every field; errors carry a JSON pointer rooted at `path`.
    pub fn validate(&self, path: &str, classes: usize) -> Result<()> {
        let err = |field: &str, msg: String| Err(Error::config(format!("{path}/{field}"), msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err("lambda", format!("must be a finite value >= 0, got {}", self.lambda));
        }
        if !(self.nps_weight >= 0.0 && self.nps_weight.is_finite()) {
            return err("nps_weight", format!("must be a finite value >= 0, got {}", self.nps_weight));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return err("tau", format!("must lie in (0, 1), got {}", self.tau));
        }
        if self.target_class >= classes {
            return err("target_class", format!("{} is not one of {classes} classes", self.target_class));
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.init_blend > 0.0 && self.init_blend <= 1.0) {
            return err("init_blend", format!("must lie in (0, 1], got {}", self.init_blend));
        }
        if let Some(t) = self.smooth_max {
            if !(t > 0.0 && t.is_finite()) {
                return err("smooth_max", format!("temperature must be positive, got {t}"));
            }
        }
        self.scene.validate(&format!("{path}/scene"))?;
        if let Err(e) = self.printable.validate() {
            return err("printable", e.to_string());
        }
        if self.creation.patch_size == 0 {
            return err("creation/patch_size", "must be at least 1".into());
        }
        self.creation.scene.validate(&format!("{path}/creation/scene"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = AttackConfig::default();
        assert_eq!(c.tau, 0.2);
        assert_eq!(c.lambda, 1e-4);
        c.validate("/attack", 4).unwrap();
    }

    #[test]
    fn range_errors_carry_paths() {
        let path = |c: AttackConfig| match c.validate("/attack", 4) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        };
        assert_eq!(path(AttackConfig { tau: 1.0, ..AttackConfig::default() }), "/attack/tau");
        assert_eq!(path(AttackConfig { lambda: -1.0, ..AttackConfig::default() }), "/attack/lambda");
        assert_eq!(path(AttackConfig { batch_size: 0, ..AttackConfig::default() }), "/attack/batch_size");
        assert_eq!(path(AttackConfig { target_class: 4, ..AttackConfig::default() }), "/attack/target_class");
        assert_eq!(path(AttackConfig { init_blend: 0.0, ..AttackConfig::default() }), "/attack/init_blend");
    }
}
