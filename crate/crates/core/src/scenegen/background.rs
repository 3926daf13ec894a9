use serde::{Deserialize, Serialize};

use crate::rng::Pcg32;
use crate::Tensor;

const BACKGROUND_STREAM: u64 = 0x6267_0000;

/// Seeded family of procedural backgrounds; background `i` depends only on
/// `(seed, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSet {
    pub seed: u64,
    pub count: usize,
}

impl Default for BackgroundSet {
    fn default() -> Self {
        BackgroundSet { seed: 17, count: 256 }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as i32;
    let f = h6 - sector as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn muted_color(rng: &mut Pcg32) -> [f64; 3] {
    let h = rng.next_f64();
    let s = rng.uniform(0.0, 0.35);
    let v = rng.uniform(0.25, 0.85);
    hsv_to_rgb(h, s, v)
}

impl BackgroundSet {
    pub fn new(seed: u64, count: usize) -> Self {
        BackgroundSet { seed, count }
    }

    /// Flat muted colour, low-frequency luminance waves, and up to four
    /// muted distractor rectangles.
    pub fn get(&self, index: usize, n: usize) -> Tensor {
        let mut rng = Pcg32::derive(self.seed, BACKGROUND_STREAM, index as u64);
        let base = muted_color(&mut rng);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let angle = rng.uniform(0.0, std::f64::consts::TAU);
                let freq = rng.uniform(0.5, 2.5);
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                let amp = rng.uniform(0.02, 0.07);
                (angle, freq, phase, amp)
            })
            .collect();
        let n_rects = rng.below(5) as usize;
        let rects: Vec<([f64; 4], [f64; 3])> = (0..n_rects)
            .map(|_| {
                let w = rng.uniform(0.05, 0.3);
                let h = rng.uniform(0.05, 0.3);
                let x = rng.uniform(0.0, 1.0 - w);
                let y = rng.uniform(0.0, 1.0 - h);
                ([x, y, x + w, y + h], muted_color(&mut rng))
            })
            .collect();
        let nf = n as f64;
        let mut data = Vec::with_capacity(n * n * 3);
        for r in 0..n {
            for c in 0..n {
                let (u, v) = ((c as f64 + 0.5) / nf, (r as f64 + 0.5) / nf);
                let mut rgb = base;
                for &(rect, color) in &rects {
                    if u >= rect[0] && u < rect[2] && v >= rect[1] && v < rect[3] {
                        rgb = color;
                    }
                }
                let shade: f64 = waves
                    .iter()
                    .map(|&(a, f, p, amp)| amp * (std::f64::consts::TAU * f * (u * a.cos() + v * a.sin()) + p).sin())
                    .sum();
                data.extend(rgb.iter().map(|&ch| (ch + shade).clamp(0.0, 1.0)));
            }
        }
        Tensor::new([n, n, 3], data).expect("n x n x 3")
    }
}
