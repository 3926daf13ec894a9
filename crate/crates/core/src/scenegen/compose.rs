use super::shapes::CanonicalObject;
use super::transform::TransformSample;
use crate::attack::PerturbationSpec;
use crate::error::{Error, Result};
use crate::gradcore::{affine_tensor, bilinear_warp, Affine2, Var};
use crate::minidet::BBox;
use crate::{Graph, Tensor};

/// A fixed object pose over a fixed background. Holds everything about the
/// composite that does not depend on the object's pixels, so the same
/// placement renders clean and perturbed objects identically.
#[derive(Clone, Debug)]
pub struct Placement {
    pub transform: TransformSample,
    pub affine: Affine2,
    pub gain: f64,
    /// Warped silhouette, `N x N x 1`.
    pub alpha: Tensor,
    alpha3: Tensor,
    /// `(1 - alpha) * background`.
    backdrop: Tensor,
}

impl Placement {
    pub fn new(background: &Tensor, object: &CanonicalObject, t: &TransformSample, gain: f64) -> Result<Self> {
        let n = background.shape()[0];
        if background.shape() != [n, n, 3] || object.image.shape() != [n, n, 3] {
            return Err(Error::shape(format!(
                "background {:?} and object {:?} must both be N x N x 3",
                background.shape(),
                object.image.shape()
            )));
        }
        let affine = t.affine(n)?;
        let alpha = bilinear_warp(&object.alpha, &affine)?;
        let a = alpha.data();
        let alpha3 = Tensor::from_fn([n, n, 3], |i| a[i[0] * n + i[1]]);
        let backdrop = background.zip_map(&alpha3, |b, al| (1.0 - al) * b)?;
        Ok(Placement { transform: *t, affine, gain, alpha, alpha3, backdrop })
    }

    pub fn size(&self) -> usize {
        self.alpha.shape()[0]
    }

    /// `clip(gain * (alpha * warp(object) + (1 - alpha) * background), 0, 1)` on `g`.
    pub fn composite_graph(&self, g: &mut Graph, object_image: Var) -> Result<Var> {
        let m = g.constant(affine_tensor(&self.affine));
        let warped = g.warp(object_image, m)?;
        let a = g.constant(self.alpha3.clone());
        let fg = g.mul(warped, a)?;
        let bg = g.constant(self.backdrop.clone());
        let mix = g.add(fg, bg)?;
        let lit = g.scale(mix, self.gain);
        Ok(g.clip(lit, 0.0, 1.0))
    }

    pub fn composite(&self, object_image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(object_image.clone());
        let y = self.composite_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Scene with `clip(object + M * delta, 0, 1)` in place of the object.
    pub fn composite_perturbed(&self, object: &CanonicalObject, pert: &PerturbationSpec) -> Result<Tensor> {
        self.composite(&pert.apply_to(&object.image)?)
    }

    /// Tight normalised bounding box of the non-zero warped silhouette.
    pub fn footprint(&self) -> Option<BBox> {
        alpha_bbox(&self.alpha)
    }
}

/// Tight box around the non-zero pixels of an `N x N x 1` alpha map.
pub fn alpha_bbox(alpha: &Tensor) -> Option<BBox> {
    let n = alpha.shape()[0];
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, &a) in alpha.data().iter().enumerate() {
        if a > 0.0 {
            let (r, c) = (i / n, i % n);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    (r0 != usize::MAX).then(|| {
        let nf = n as f64;
        BBox::from_corners(c0 as f64 / nf, r0 as f64 / nf, (c1 + 1) as f64 / nf, (r1 + 1) as f64 / nf)
    })
}

/// Renders `object` onto `background` under `t`, scaled by `gain` and clipped to [0, 1].
pub fn compose_scene(background: &Tensor, object: &CanonicalObject, t: &TransformSample, gain: f64) -> Result<Tensor> {
    Placement::new(background, object, t, gain)?.composite(&object.image)
}

/// The masked perturbation `M * delta` carried into scene coordinates by the
/// same affine the object uses.
pub fn align_perturbation(pert: &PerturbationSpec, t: &TransformSample) -> Result<Tensor> {
    let n = pert.delta.shape()[0];
    bilinear_warp(&pert.applied()?, &t.affine(n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_object_leaves_scaled_background() {
        let bg = Tensor::from_fn([16, 16, 3], |i| (i[0] + i[1] + i[2]) as f64 / 40.0);
        let mut obj = CanonicalObject::circle(16);
        obj.alpha = Tensor::zeros([16, 16, 1]);
        let out = compose_scene(&bg, &obj, &TransformSample::IDENTITY, 1.5).unwrap();
        let expect = bg.map(|v| (1.5 * v).min(1.0));
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn opaque_full_frame_object_is_copied() {
        let bg = Tensor::full([8, 8, 3], 0.3);
        let obj = CanonicalObject {
            image: Tensor::from_fn([8, 8, 3], |i| (i[0] * 8 + i[1]) as f64 / 64.0),
            alpha: Tensor::full([8, 8, 1], 1.0),
            class_id: 0,
        };
        let out = compose_scene(&bg, &obj, &TransformSample::IDENTITY, 1.0).unwrap();
        assert_eq!(out, obj.image);
    }

    #[test]
    fn alpha_bbox_of_block() {
        let a =
            Tensor::from_fn([10, 10, 1], |i| if (2..5).contains(&i[0]) && (6..9).contains(&i[1]) { 1.0 } else { 0.0 });
        let b = alpha_bbox(&a).unwrap();
        for (got, want) in b.corners().iter().zip([0.6, 0.2, 0.9, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(alpha_bbox(&Tensor::zeros([4, 4, 1])).is_none());
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let obj = CanonicalObject::circle(8);
        assert!(compose_scene(&Tensor::zeros([9, 9, 3]), &obj, &TransformSample::IDENTITY, 1.0).is_err());
    }
}
