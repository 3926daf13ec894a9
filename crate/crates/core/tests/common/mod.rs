#![allow(dead_code)]

//! Independent reference implementations shared by the integration tests.

pub mod gradsuite;

use signforge::attack::PrintableSet;
use signforge::minidet::{BBox, Detection};
use signforge::{Pcg32, Tensor};

pub fn random_tensor(rng: &mut Pcg32, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Direct summation: `out[y][x][o] = sum_{ky,kx,c} in[y*s+ky-p][x*s+kx-p][c] * k[ky][kx][c][o]`.
pub fn conv2d_naive(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..cout {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        let ix = (x * stride + kx) as isize - padding as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += input.get(&[iy as usize, ix as usize, c]).unwrap()
                                * kernel.get(&[ky, kx, c, o]).unwrap();
                        }
                    }
                }
                out[(y * ow + x) * cout + o] = acc;
            }
        }
    }
    Tensor::new([oh, ow, cout], out).unwrap()
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ax1) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay0, ay1) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx0, bx1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by0, by1) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Repeatedly take the best remaining box, drop every same-class box overlapping it.
pub fn nms_brute(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut pool: Vec<Detection> = dets.to_vec();
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (a, b) = (&pool[i], &pool[best]);
            let better = a.score > b.score || (a.score == b.score && (a.cell, a.box_index) < (b.cell, b.box_index));
            if better {
                best = i;
            }
        }
        let top = pool.remove(best);
        pool.retain(|d| d.class_id != top.class_id || iou(&d.bbox, &top.bbox) < threshold);
        kept.push(top);
    }
    kept
}

/// Sum over every index pair of absolute neighbour differences of `M * delta`.
pub fn tv_direct(mask: &Tensor, delta: &Tensor) -> f64 {
    let s = mask.shape();
    let a = |r: usize, c: usize, k: usize| mask.get(&[r, c, k]).unwrap() * delta.get(&[r, c, k]).unwrap();
    let mut total = 0.0;
    for r in 0..s[0] {
        for c in 0..s[1] {
            for k in 0..s[2] {
                if r + 1 < s[0] {
                    total += (a(r + 1, c, k) - a(r, c, k)).abs();
                }
                if c + 1 < s[1] {
                    total += (a(r, c + 1, k) - a(r, c, k)).abs();
                }
            }
        }
    }
    total
}

/// Product of distances to each printable colour, summed over masked pixels.
pub fn nps_direct(mask: &Tensor, delta: &Tensor, printable: &PrintableSet) -> f64 {
    let s = mask.shape();
    let mut total = 0.0;
    for r in 0..s[0] {
        for c in 0..s[1] {
            if mask.get(&[r, c, 0]).unwrap() == 0.0 {
                continue;
            }
            let p: Vec<f64> = (0..3).map(|k| mask.get(&[r, c, k]).unwrap() * delta.get(&[r, c, k]).unwrap()).collect();
            let mut prod = 1.0;
            for q in printable.colors() {
                let d2: f64 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
                prod *= d2.sqrt();
            }
            total += prod;
        }
    }
    total
}

/// Largest `objectness * P(class)` over every cell and box of a raw output.
pub fn max_score_scan(raw: &Tensor, boxes: usize, classes: usize, target: usize) -> (f64, (usize, usize, usize)) {
    let s = raw.shape()[0];
    let len = 5 + classes;
    let mut best = (f64::NEG_INFINITY, (0, 0, 0));
    for r in 0..s {
        for c in 0..s {
            for b in 0..boxes {
                let at = |k: usize| raw.get(&[r, c, b * len + k]).unwrap();
                let obj = 1.0 / (1.0 + (-at(0)).exp());
                let m = (0..classes).map(|y| at(5 + y)).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..classes).map(|y| (at(5 + y) - m).exp()).sum();
                let p = (at(5 + target) - m).exp() / z;
                if obj * p > best.0 {
                    best = (obj * p, (r, c, b));
                }
            }
        }
    }
    best
}

pub fn random_box(rng: &mut Pcg32) -> BBox {
    BBox { cx: rng.uniform(0.1, 0.9), cy: rng.uniform(0.1, 0.9), w: rng.uniform(0.05, 0.4), h: rng.uniform(0.05, 0.4) }
}
