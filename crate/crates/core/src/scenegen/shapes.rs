use crate::error::{Error, Result};
use crate::minidet::classes;
use crate::Tensor;

/// An object in its own canonical frame: RGB image plus a binary silhouette.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalObject {
    /// `N x N x 3`, zero outside the silhouette.
    pub image: Tensor,
    /// `N x N x 1`, exactly 0 or 1.
    pub alpha: Tensor,
    pub class_id: usize,
}

const RED: [f64; 3] = [0.78, 0.07, 0.09];
const WHITE: [f64; 3] = [0.96, 0.96, 0.96];
const BLUE: [f64; 3] = [0.10, 0.35, 0.82];
const YELLOW: [f64; 3] = [0.96, 0.80, 0.10];
const GREEN: [f64; 3] = [0.13, 0.62, 0.25];

/// Octagon apothem as a fraction of the frame side.
const OCTAGON_APOTHEM: f64 = 0.48;

fn in_octagon(u: f64, v: f64, apothem: f64) -> bool {
    let diag = apothem * std::f64::consts::SQRT_2;
    u.abs() <= apothem && v.abs() <= apothem && (u + v).abs() <= diag && (u - v).abs() <= diag
}

/// Paints `paint(u, v)` at every pixel centre, with `(u, v)` relative to the
/// frame centre in units of the side length.
fn raster(n: usize, class_id: usize, paint: impl Fn(f64, f64) -> Option<[f64; 3]>) -> CanonicalObject {
    let mut image = vec![0.0; n * n * 3];
    let mut alpha = vec![0.0; n * n];
    let nf = n as f64;
    for r in 0..n {
        for c in 0..n {
            let u = (c as f64 + 0.5) / nf - 0.5;
            let v = (r as f64 + 0.5) / nf - 0.5;
            if let Some(rgb) = paint(u, v) {
                image[(r * n + c) * 3..][..3].copy_from_slice(&rgb);
                alpha[r * n + c] = 1.0;
            }
        }
    }
    CanonicalObject {
        image: Tensor::new([n, n, 3], image).expect("n x n x 3"),
        alpha: Tensor::new([n, n, 1], alpha).expect("n x n x 1"),
        class_id,
    }
}

impl CanonicalObject {
    /// Red octagon with a white rim and a white legend band broken into four glyph blocks.
    pub fn stop_sign(n: usize) -> Self {
        raster(n, classes::STOP, |u, v| {
            if !in_octagon(u, v, OCTAGON_APOTHEM) {
                return None;
            }
            if !in_octagon(u, v, OCTAGON_APOTHEM - 0.04) {
                return Some(WHITE);
            }
            if v.abs() <= 0.075 && u.abs() <= 0.31 {
                // four letters separated by thin red gaps
                let slot = ((u + 0.31) / 0.155).floor();
                let local = (u + 0.31) - slot * 0.155;
                if local > 0.02 {
                    return Some(WHITE);
                }
            }
            Some(RED)
        })
    }

    pub fn circle(n: usize) -> Self {
        raster(n, classes::CIRCLE, |u, v| (u * u + v * v <= 0.48 * 0.48).then_some(BLUE))
    }

    /// Upward-pointing triangle.
    pub fn triangle(n: usize) -> Self {
        raster(n, classes::TRIANGLE, |u, v| {
            let (top, bottom) = (-0.44, 0.40);
            if v < top || v > bottom {
                return None;
            }
            let half_width = 0.48 * (v - top) / (bottom - top);
            (u.abs() <= half_width).then_some(YELLOW)
        })
    }

    pub fn rectangle(n: usize) -> Self {
        raster(n, classes::RECTANGLE, |u, v| (u.abs() <= 0.46 && v.abs() <= 0.30).then_some(GREEN))
    }

    pub fn for_class(class_id: usize, n: usize) -> Result<Self> {
        match class_id {
            classes::STOP => Ok(Self::stop_sign(n)),
            classes::CIRCLE => Ok(Self::circle(n)),
            classes::TRIANGLE => Ok(Self::triangle(n)),
            classes::RECTANGLE => Ok(Self::rectangle(n)),
            other => Err(Error::invalid(format!("no canonical shape for class {other}"))),
        }
    }

    /// All four toy classes, indexed by class id.
    pub fn catalog(n: usize) -> Vec<Self> {
        (0..classes::NAMES.len()).map(|c| Self::for_class(c, n).expect("known class")).collect()
    }

    /// Mid-grey `side x side` square centred in an `n x n` frame, used as the
    /// carrier of a free-standing patch.
    pub fn patch(n: usize, side: usize, class_id: usize) -> Result<Self> {
        if side == 0 || side > n {
            return Err(Error::invalid(format!("patch side {side} must be in 1..={n}")));
        }
        let lo = (n - side) / 2;
        let hi = lo + side;
        let mut obj = raster(n, class_id, |_, _| None);
        let image =
            Tensor::from_fn(
                [n, n, 3],
                |i| {
                    if (lo..hi).contains(&i[0]) && (lo..hi).contains(&i[1]) {
                        0.5
                    } else {
                        0.0
                    }
                },
            );
        let alpha =
            Tensor::from_fn(
                [n, n, 1],
                |i| {
                    if (lo..hi).contains(&i[0]) && (lo..hi).contains(&i[1]) {
                        1.0
                    } else {
                        0.0
                    }
                },
            );
        obj.image = image;
        obj.alpha = alpha;
        Ok(obj)
    }

    pub fn size(&self) -> usize {
        self.image.shape()[0]
    }

    /// Alpha repeated over three channels.
    pub fn alpha3(&self) -> Tensor {
        let n = self.size();
        let a = self.alpha.data();
        Tensor::from_fn([n, n, 3], |i| a[i[0] * n + i[1]])
    }
}

/// `u, v` relative to frame centre: is the point inside the stop-sign silhouette?
pub fn stop_sign_contains(u: f64, v: f64) -> bool {
    in_octagon(u, v, OCTAGON_APOTHEM)
}
