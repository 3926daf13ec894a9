use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{stop_sign_contains, CanonicalObject};
use crate::Tensor;

/// Which stencil a mask was cut from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskShape {
    /// The whole sign face.
    OctagonPoster,
    /// Two horizontal bars, one above and one below the legend.
    #[default]
    TwoBarSticker,
    /// The full carrier square of a free-standing patch.
    Patch,
}

impl MaskShape {
    pub fn tag(self) -> &'static str {
        match self {
            MaskShape::OctagonPoster => "octagon-poster",
            MaskShape::TwoBarSticker => "two-bar-sticker",
            MaskShape::Patch => "patch",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            MaskShape::OctagonPoster => 0,
            MaskShape::TwoBarSticker => 1,
            MaskShape::Patch => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(MaskShape::OctagonPoster),
            1 => Some(MaskShape::TwoBarSticker),
            2 => Some(MaskShape::Patch),
            _ => None,
        }
    }
}

// bar rows in units of the frame side, relative to the centre
const BAR_BANDS: [(f64, f64); 2] = [(-0.3, -0.1), (0.1, 0.3)];
const BAR_HALF_WIDTH: f64 = 0.4;

fn two_bar_contains(u: f64, v: f64) -> bool {
    u.abs() <= BAR_HALF_WIDTH && BAR_BANDS.iter().any(|&(lo, hi)| v >= lo && v <= hi) && stop_sign_contains(u, v)
}

/// Mask `M` and perturbation `delta` in the object's canonical frame. The
/// object is only ever changed by `M * delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    /// `N x N x 3`, entries exactly 0 or 1.
    pub mask: Tensor,
    /// `N x N x 3`, entries in [-1, 1], zero where the mask is 0.
    pub delta: Tensor,
    pub shape: MaskShape,
}

impl PerturbationSpec {
    /// Zero perturbation under the stencil `shape`, sized to `object`.
    /// Disappearance stencils are intersected with the object silhouette.
    pub fn zeros(shape: MaskShape, object: &CanonicalObject) -> Self {
        let n = object.size();
        let alpha = object.alpha.data();
        let nf = n as f64;
        let mask = Tensor::from_fn([n, n, 3], |i| {
            let (r, c) = (i[0], i[1]);
            let inside = alpha[r * n + c] > 0.0;
            let u = (c as f64 + 0.5) / nf - 0.5;
            let v = (r as f64 + 0.5) / nf - 0.5;
            let keep = match shape {
                MaskShape::OctagonPoster | MaskShape::Patch => inside,
                MaskShape::TwoBarSticker => inside && two_bar_contains(u, v),
            };
            if keep {
                1.0
            } else {
                0.0
            }
        });
        PerturbationSpec { delta: Tensor::zeros([n, n, 3]), mask, shape }
    }

    pub fn new(mask: Tensor, delta: Tensor, shape: MaskShape) -> Result<Self> {
        let s = mask.shape();
        if s.len() != 3 || s[2] != 3 || delta.shape() != s {
            return Err(Error::shape(format!("mask {:?} and delta {:?} must both be N x N x 3", s, delta.shape())));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask entries must be exactly 0 or 1"));
        }
        if delta.data().iter().any(|d| !(d.abs() <= 1.0)) {
            return Err(Error::invalid("delta entries must lie in [-1, 1]"));
        }
        let spec = PerturbationSpec { mask, delta, shape };
        spec.applied()?;
        Ok(spec)
    }

    pub fn size(&self) -> usize {
        self.mask.shape()[0]
    }

    /// Number of pixels (not channels) the mask covers.
    pub fn coverage(&self) -> usize {
        self.mask.data().chunks(3).filter(|p| p[0] > 0.0).count()
    }

    /// `M * delta`.
    pub fn applied(&self) -> Result<Tensor> {
        self.mask.zip_map(&self.delta, |m, d| m * d)
    }

    /// `clip(object + M * delta, 0, 1)`.
    pub fn apply_to(&self, image: &Tensor) -> Result<Tensor> {
        image.zip_map(&self.applied()?, |x, d| (x + d).clamp(0.0, 1.0))
    }

    /// Is the mask inside the object's silhouette?
    pub fn mask_within(&self, object: &CanonicalObject) -> bool {
        let a = object.alpha.data();
        self.mask.data().iter().enumerate().all(|(i, &m)| m == 0.0 || a[i / 3] > 0.0)
    }

    /// Projection after an optimiser step: clip to [-1, 1], restrict to the
    /// mask, then shrink so `image + delta` stays in [0, 1].
    pub fn project(&mut self, image: &Tensor) -> Result<()> {
        if image.shape() != self.delta.shape() {
            return Err(Error::shape(format!("image {:?} vs delta {:?}", image.shape(), self.delta.shape())));
        }
        let mask = self.mask.data().to_vec();
        let x = image.data();
        for (i, d) in self.delta.data_mut().iter_mut().enumerate() {
            let v = mask[i] * d.clamp(-1.0, 1.0);
            *d = (x[i] + v).clamp(0.0, 1.0) - x[i];
        }
        Ok(())
    }
}

/// Colours a printer can reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrintableSet {
    colors: Vec<[f64; 3]>,
}

impl Default for PrintableSet {
    /// The 27-point lattice `{0, 0.5, 1}^3`.
    fn default() -> Self {
        let levels = [0.0, 0.5, 1.0];
        let mut colors = Vec::with_capacity(27);
        for r in levels {
            for g in levels {
                for b in levels {
                    colors.push([r, g, b]);
                }
            }
        }
        PrintableSet { colors }
    }
}

impl PrintableSet {
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self> {
        let set = PrintableSet { colors };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.is_empty() {
            return Err(Error::invalid("printable set is empty"));
        }
        if self.colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("printable colour components must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }
}
