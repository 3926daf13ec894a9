use super::compose::Placement;
use super::shapes::CanonicalObject;
use super::transform::{sample_transform, SceneDistribution};
use crate::error::{Error, Result};
use crate::minidet::LabeledScene;
use crate::rng::Pcg32;

/// `n` scenes, each one shape of a uniformly drawn class composited on a
/// background from the distribution's pool. The label is the tight box of
/// the warped silhouette.
pub fn synth_dataset(
    n: usize,
    dist: &SceneDistribution,
    catalog: &[CanonicalObject],
    rng: &mut Pcg32,
) -> Result<Vec<LabeledScene>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    if catalog.is_empty() {
        return Err(Error::invalid("empty object catalog"));
    }
    dist.validate("/scene")?;
    let size = catalog[0].size();
    (0..n)
        .map(|_| {
            let object = &catalog[rng.below(catalog.len() as u32) as usize];
            let bg_index = rng.below(dist.backgrounds.count as u32) as usize;
            let t = sample_transform(dist, rng);
            let gain = dist.sample_gain(rng);
            let background = dist.backgrounds.get(bg_index, size);
            let placement = Placement::new(&background, object, &t, gain)?;
            let image = placement.composite(&object.image)?;
            let bbox = placement
                .footprint()
                .ok_or_else(|| Error::invalid(format!("object left the frame entirely under {t:?}")))?;
            Ok(LabeledScene { image, objects: vec![(object.class_id, bbox)] })
        })
        .collect()
}
