use super::perturbation::PrintableSet;
use crate::error::{Error, Result};
use crate::gradcore::Var;
use crate::minidet::{BBox, ClassScore, Decoded};
use crate::{Graph, Tensor};

fn check_pair(mask: &Tensor, delta: &Tensor) -> Result<()> {
    if mask.shape() != delta.shape() || mask.rank() != 3 {
        return Err(Error::shape(format!(
            "mask {:?} and delta {:?} must match as H x W x C",
            mask.shape(),
            delta.shape()
        )));
    }
    Ok(())
}

/// Total variation of `M * delta`: absolute differences to the next row and
/// the next column, summed over all channels. Boundary terms are omitted.
pub fn tv_norm(mask: &Tensor, delta: &Tensor) -> Result<f64> {
    check_pair(mask, delta)?;
    let a = mask.zip_map(delta, |m, d| m * d)?;
    let (h, w, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let x = a.data();
    let at = |r: usize, col: usize, k: usize| x[(r * w + col) * c + k];
    let mut total = 0.0;
    for r in 0..h {
        for col in 0..w {
            for k in 0..c {
                if r + 1 < h {
                    total += (at(r + 1, col, k) - at(r, col, k)).abs();
                }
                if col + 1 < w {
                    total += (at(r, col + 1, k) - at(r, col, k)).abs();
                }
            }
        }
    }
    Ok(total)
}

/// Non-printability: for every masked pixel of `M * delta`, the product of
/// its Euclidean distances to each printable colour, summed.
pub fn nps(mask: &Tensor, delta: &Tensor, printable: &PrintableSet) -> Result<f64> {
    check_pair(mask, delta)?;
    printable.validate()?;
    if mask.shape()[2] != 3 {
        return Err(Error::shape("nps needs RGB tensors"));
    }
    let mut total = 0.0;
    for (m, d) in mask.data().chunks(3).zip(delta.data().chunks(3)) {
        if m[0] == 0.0 {
            continue;
        }
        let p = [m[0] * d[0], m[1] * d[1], m[2] * d[2]];
        let mut prod = 1.0;
        for q in printable.colors() {
            prod *= ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        }
        total += prod;
    }
    Ok(total)
}

/// [`tv_norm`] on a graph node holding `M * delta`.
pub fn tv_norm_graph(g: &mut Graph, applied: Var) -> Result<Var> {
    let shape = g.shape(applied).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!("tv_norm expects H x W x C, got {shape:?}")));
    }
    let mut terms = Vec::new();
    for axis in 0..2 {
        let n = shape[axis];
        if n < 2 {
            continue;
        }
        let hi = g.slice(applied, axis, 1, n - 1)?;
        let lo = g.slice(applied, axis, 0, n - 1)?;
        let diff = g.sub(hi, lo)?;
        let a = g.abs(diff);
        terms.push(g.sum(a));
    }
    match terms.as_slice() {
        [] => Ok(g.constant(Tensor::scalar(0.0))),
        [t] => Ok(*t),
        [a, b] => g.add(*a, *b),
        _ => unreachable!(),
    }
}

/// [`nps`] on a graph node holding `M * delta`; `mask` selects pixels.
pub fn nps_graph(g: &mut Graph, applied: Var, mask: &Tensor, printable: &PrintableSet) -> Result<Var> {
    printable.validate()?;
    let shape = g.shape(applied).to_vec();
    if shape.len() != 3 || shape[2] != 3 || mask.shape() != shape.as_slice() {
        return Err(Error::shape(format!("nps expects matching H x W x 3, got {shape:?} and {:?}", mask.shape())));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut prod: Option<Var> = None;
    for q in printable.colors() {
        let color = g.constant(Tensor::from_fn([h, w, 3], |i| q[i[2]]));
        let d = g.sub(applied, color)?;
        let dist = g.norm2_last(d);
        prod = Some(match prod {
            None => dist,
            Some(p) => g.mul(p, dist)?,
        });
    }
    let m = mask.data();
    let pixel_mask = g.constant(Tensor::from_fn([h, w, 1], |i| m[(i[0] * w + i[1]) * 3]));
    let masked = g.mul(prod.expect("printable set is nonempty"), pixel_mask)?;
    Ok(g.sum(masked))
}

/// Disappearance loss: the largest `target` score over every cell and box.
/// With `smooth_max = Some(t)` the max is replaced by a log-sum-exp at temperature `t`.
pub fn loss_disappearance(
    g: &mut Graph,
    decoded: &Decoded,
    target: usize,
    mode: ClassScore,
    smooth_max: Option<f64>,
) -> Result<Var> {
    let scores = decoded.class_score_map(g, mode, target)?;
    match smooth_max {
        None => Ok(g.reduce_max(scores).0),
        Some(t) => g.log_sum_exp(scores, t),
    }
}

/// Which branch of the creation loss was active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CreationPhase {
    /// Box confidence at or below tau: push objectness up.
    Localize,
    /// Box confidence above tau: push the target class up.
    Classify,
}

/// `(row, col)` of every grid cell whose region overlaps `footprint`.
pub fn candidate_cells(footprint: &BBox, grid: usize) -> Vec<(usize, usize)> {
    let [x0, y0, x1, y1] = footprint.corners();
    let s = grid as f64;
    let overlaps = |k: usize, lo: f64, hi: f64| (k as f64) / s < hi && (k + 1) as f64 / s > lo;
    let mut cells = Vec::new();
    for r in 0..grid {
        for c in 0..grid {
            if overlaps(r, y0, y1) && overlaps(c, x0, x1) {
                cells.push((r, c));
            }
        }
    }
    cells
}

/// Creation loss over candidate `(row, col, box)` triples. The box with the
/// highest confidence is picked; if its confidence is at most `tau` the loss is
/// minus that confidence, otherwise minus its conditional `target` probability.
pub fn loss_creation(
    g: &mut Graph,
    decoded: &Decoded,
    candidates: &[(usize, usize, usize)],
    target: usize,
    tau: f64,
) -> Result<(Var, CreationPhase)> {
    if candidates.is_empty() {
        return Err(Error::invalid("creation loss needs at least one candidate box"));
    }
    let obj = g.value(decoded.objectness).clone();
    let mut best = None;
    let mut best_conf = f64::NEG_INFINITY;
    for &(r, c, b) in candidates {
        let conf = obj
            .get(&[r, c, b, 0])
            .map_err(|_| Error::IndexOutOfRange(format!("candidate ({r}, {c}, {b}) outside the output grid")))?;
        if conf > best_conf {
            best_conf = conf;
            best = Some((r, c, b));
        }
    }
    let (r, c, b) = best.expect("nonempty candidates");
    if best_conf <= tau {
        let conf = decoded.box_conf(g, (r, c), b)?;
        Ok((g.neg(conf), CreationPhase::Localize))
    } else {
        let p = decoded.class_prob_conditional(g, (r, c), b, target)?;
        Ok((g.neg(p), CreationPhase::Classify))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(shape: [usize; 3]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn tv_small_cases() {
        let d = Tensor::new([2, 2, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(tv_norm(&full([2, 2, 1]), &d).unwrap(), 2.0);
        assert_eq!(tv_norm(&full([3, 3, 3]), &Tensor::full([3, 3, 3], 0.4)).unwrap(), 0.0);
        assert_eq!(tv_norm(&Tensor::zeros([3, 3, 1]), &Tensor::full([3, 3, 1], 0.4)).unwrap(), 0.0);
        assert!(tv_norm(&full([2, 2, 1]), &Tensor::zeros([2, 3, 1])).is_err());
    }

    #[test]
    fn tv_graph_matches_plain() {
        let d = Tensor::from_fn([4, 5, 3], |i| ((i[0] * 31 + i[1] * 7 + i[2]) as f64).sin());
        let mut g = Graph::new();
        let v = g.constant(d.clone());
        let t = tv_norm_graph(&mut g, v).unwrap();
        assert!((g.value(t).item() - tv_norm(&full([4, 5, 3]), &d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nps_small_cases() {
        let one = PrintableSet::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let px = Tensor::full([1, 1, 3], 1.0);
        assert!((nps(&full([1, 1, 3]), &px, &one).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let lattice = PrintableSet::default();
        let d = Tensor::from_fn([2, 2, 3], |i| [0.0, 0.5, 1.0][(i[0] + i[1] + i[2]) % 3]);
        assert_eq!(nps(&full([2, 2, 3]), &d, &lattice).unwrap(), 0.0);
        assert_eq!(nps(&Tensor::zeros([1, 1, 3]), &Tensor::full([1, 1, 3], 0.3), &one).unwrap(), 0.0);
    }

    #[test]
    fn candidate_cells_cover_overlap_only() {
        let b = BBox::from_corners(0.30, 0.0, 0.42, 0.1);
        assert_eq!(candidate_cells(&b, 7), vec![(0, 2)]);
        let b = BBox::from_corners(0.25, 0.2, 0.45, 0.28);
        assert_eq!(candidate_cells(&b, 7), vec![(1, 1), (1, 2), (1, 3)]);
    }
}
