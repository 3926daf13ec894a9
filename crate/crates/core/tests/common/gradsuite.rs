//! Finite-difference checks for every differentiable operation of the
//! pipeline, each at ten seeded random points.

use signforge::attack::{
    loss_creation, loss_disappearance, nps_graph, objective, tv_norm_graph, AttackConfig, MaskShape, PerturbationSpec,
    PrintableSet, SceneLoss,
};
use signforge::gradcore::{grad_check, Activation, Affine2, Var};
use signforge::minidet::{decode, Architecture, ClassScore, DetectorConfig, DetectorModel};
use signforge::scenegen::{BackgroundSet, CanonicalObject, Placement, TransformSample};
use signforge::{Graph, Pcg32, Result, Tensor};

use super::random_tensor;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
pub const POINTS: usize = 10;

pub struct Case {
    pub name: &'static str,
    pub worst: f64,
    /// Draws discarded because they straddled a kink.
    pub redrawn: usize,
}

fn weights_for(g: &mut Graph, y: Var, rng: &mut Pcg32) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random_tensor(rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Random projection `sum(w * f(x))` so every output coordinate matters.
fn check_projected<F>(name: &'static str, seed: u64, point: impl FnMut(&mut Pcg32) -> Tensor, f: F) -> Case
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let w_seed = seed.wrapping_mul(0x9e37_79b9) ^ 0x5eed;
    check_scalar(name, seed, point, move |g: &mut Graph, v| {
        let y = f(g, v)?;
        let mut wr = Pcg32::seeded(w_seed);
        weights_for(g, y, &mut wr)
    })
}

fn eval_at<F>(f: &F, x: Tensor) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x);
    let y = f(&mut g, v).unwrap();
    g.value(y).item()
}

/// True when the step around coordinate `i` straddles a slope discontinuity:
/// there the second difference is as large as the gradient mismatch itself,
/// whereas for a smooth function it is orders of magnitude larger than the
/// O(h^2) central-difference error.
fn straddles_kink<F>(f: &F, x: &Tensor, i: usize, mismatch: f64) -> bool
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let at = |d: f64| {
        let mut p = x.clone();
        p.data_mut()[i] += d;
        eval_at(f, p)
    };
    let second = (at(H) + at(-H) - 2.0 * at(0.0)).abs();
    second / (2.0 * H) >= 0.5 * mismatch
}

/// Ten accepted points per case. A draw whose worst coordinate sits on a kink
/// (ReLU, |x|, argmax switch) is redrawn; a failure anywhere else counts.
fn check_scalar<F>(name: &'static str, seed: u64, mut point: impl FnMut(&mut Pcg32) -> Tensor, f: F) -> Case
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    let mut rng = Pcg32::new(seed, 0);
    let mut accepted = 0;
    let mut redrawn = 0;
    while accepted < POINTS {
        let x = point(&mut rng);
        let res = grad_check(&f, &x, H).unwrap_or_else(|e| panic!("{name}: {e}"));
        if res.max_rel_error >= TOL {
            let i = res.worst_index;
            let mismatch = (res.analytic.data()[i] - res.numeric.data()[i]).abs();
            if straddles_kink(&f, &x, i, mismatch) && redrawn < 3 * POINTS {
                redrawn += 1;
                continue;
            }
        }
        worst = worst.max(res.max_rel_error);
        accepted += 1;
    }
    Case { name, worst, redrawn }
}

/// Values bounded away from zero so leaky-ReLU and |x| kinks are not crossed.
fn away_from_zero(rng: &mut Pcg32, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = rng.uniform(0.05, 1.0);
                if rng.next_u32() & 1 == 0 {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Distance from the nearest bilinear kink line touched by a warp of an
/// `h x w` image: source coordinates at which the interpolation cell changes.
fn warp_kink_margin(m: &[f64; 6], h: usize, w: usize) -> f64 {
    let inv = Affine2::new(*m).inverse().unwrap();
    let mut margin = f64::INFINITY;
    for r in 0..h {
        for c in 0..w {
            let (x, y) = inv.apply(c as f64 + 0.5, r as f64 + 0.5);
            for v in [x - 0.5, y - 0.5] {
                margin = margin.min((v - v.round()).abs());
            }
        }
    }
    margin
}

/// Smallest absolute neighbour difference of `mask * delta` among pairs that
/// touch a masked pixel; TV has a kink wherever one of these is zero.
fn tv_margin(mask: &Tensor, delta: &Tensor) -> f64 {
    let a = mask.zip_map(delta, |m, d| m * d).unwrap();
    let s = a.shape().to_vec();
    let live = |r: usize, c: usize, k: usize| mask.get(&[r, c, k]).unwrap() != 0.0;
    let mut margin = f64::INFINITY;
    for r in 0..s[0] {
        for c in 0..s[1] {
            for k in 0..s[2] {
                for (rr, cc) in [(r + 1, c), (r, c + 1)] {
                    if rr < s[0] && cc < s[1] && (live(r, c, k) || live(rr, cc, k)) {
                        margin = margin.min((a.get(&[rr, cc, k]).unwrap() - a.get(&[r, c, k]).unwrap()).abs());
                    }
                }
            }
        }
    }
    margin
}

/// Per-coordinate uniform draws in `bounds(i)`, resampled until no TV kink
/// lies within a step of the point.
fn tv_safe_delta(rng: &mut Pcg32, mask: &Tensor, bounds: impl Fn(usize) -> (f64, f64)) -> Tensor {
    loop {
        let data = (0..mask.len()).map(|i| {
            let (lo, hi) = bounds(i);
            rng.uniform(lo, hi)
        });
        let d = Tensor::new(mask.shape().to_vec(), data.collect()).unwrap();
        if tv_margin(mask, &d) > 4.0 * H {
            return d;
        }
    }
}

fn random_affine(rng: &mut Pcg32, n: usize) -> [f64; 6] {
    loop {
        let t = TransformSample {
            rotation_deg: rng.uniform(-40.0, 40.0),
            translate: (rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)),
            scale: rng.uniform(0.6, 1.0),
        };
        let a = t.affine(n).unwrap();
        if warp_kink_margin(&a.m, n, n) > 0.01 {
            return a.m;
        }
    }
}

fn tv_mask() -> Tensor {
    Tensor::from_fn([4, 4, 2], |i| if (i[0] + 2 * i[1]) % 5 == 0 { 0.0 } else { 1.0 })
}

fn tiny_detector() -> DetectorModel {
    let cfg = DetectorConfig { grid: 2, input_size: 16, ..DetectorConfig::reference() };
    DetectorModel::init(cfg, Architecture { block_channels: vec![4, 6, 6] }, 21).unwrap()
}

pub fn run_all() -> Vec<Case> {
    let mut cases = Vec::new();

    cases.push(check_projected(
        "conv2d/input",
        1,
        |r| random_tensor(r, &[6, 5, 3], -1.0, 1.0),
        |g, x| {
            let k =
                g.constant(Tensor::from_fn([3, 3, 3, 4], |i| ((i[0] * 37 + i[1] * 11 + i[2] * 5 + i[3]) as f64).sin()));
            g.conv2d(x, k, 1, 1)
        },
    ));
    cases.push(check_projected(
        "conv2d/kernel",
        2,
        |r| random_tensor(r, &[3, 3, 2, 3], -1.0, 1.0),
        |g, k| {
            let x = g.constant(Tensor::from_fn([7, 6, 2], |i| ((i[0] * 13 + i[1] * 3 + i[2]) as f64 * 0.7).cos()));
            g.conv2d(x, k, 2, 1)
        },
    ));
    cases.push(check_projected("sigmoid", 3, |r| random_tensor(r, &[4, 5], -4.0, 4.0), |g, x| Ok(g.sigmoid(x))));
    cases.push(check_projected(
        "leaky_relu",
        4,
        |r| away_from_zero(r, &[4, 5]),
        |g, x| g.activation(x, Activation::LeakyRelu(0.1)),
    ));
    cases.push(check_projected("softmax", 5, |r| random_tensor(r, &[3, 6], -3.0, 3.0), |g, x| Ok(g.softmax(x))));
    cases.push(check_projected(
        "bilinear_warp/image",
        6,
        |r| random_tensor(r, &[9, 9, 2], 0.0, 1.0),
        |g, x| {
            let mut rr = Pcg32::seeded(66);
            let m = g.constant(Tensor::new([2, 3], random_affine(&mut rr, 9).to_vec()).unwrap());
            g.warp(x, m)
        },
    ));
    cases.push(check_projected(
        "bilinear_warp/transform",
        7,
        |r| Tensor::new([2, 3], random_affine(r, 9).to_vec()).unwrap(),
        |g, m| {
            let img = g.constant(Tensor::from_fn([9, 9, 2], |i| ((i[0] * 9 + i[1]) as f64 * 0.41 + i[2] as f64).sin()));
            g.warp(img, m)
        },
    ));

    let cfg = DetectorConfig { grid: 3, input_size: 24, ..DetectorConfig::reference() };
    let raw_shape = cfg.output_shape();
    {
        let cfg = cfg.clone();
        cases.push(check_scalar(
            "decode",
            8,
            |r| random_tensor(r, &raw_shape, -2.0, 2.0),
            move |g, raw| {
                let d = decode(g, &cfg, raw)?;
                let mut wr = Pcg32::seeded(88);
                let mut acc = g.constant(Tensor::scalar(0.0));
                for p in [d.objectness, d.class_probs, d.center_x, d.center_y, d.width, d.height] {
                    let s = weights_for(g, p, &mut wr)?;
                    acc = g.add(acc, s)?;
                }
                Ok(acc)
            },
        ));
    }
    for (name, which) in [("extract_box_conf", 0), ("extract_class_prob", 1), ("extract_class_prob_conditional", 2)] {
        let cfg = cfg.clone();
        cases.push(check_scalar(
            name,
            9 + which as u64,
            |r| random_tensor(r, &raw_shape, -2.0, 2.0),
            move |g, raw| {
                let d = decode(g, &cfg, raw)?;
                match which {
                    0 => d.box_conf(g, (1, 2), 1),
                    1 => d.class_prob(g, (2, 0), 0, 3),
                    _ => d.class_prob_conditional(g, (0, 1), 1, 2),
                }
            },
        ));
    }

    cases.push(check_scalar(
        "tv_norm",
        12,
        // small amplitude keeps the roundoff of the O(1) sum below the 1e-8 floor
        |r| tv_safe_delta(r, &tv_mask(), |_| (-0.02, 0.02)),
        |g, d| {
            let mask = g.constant(tv_mask());
            let a = g.mul(d, mask)?;
            tv_norm_graph(g, a)
        },
    ));
    cases.push(check_scalar(
        "nps",
        13,
        |r| random_tensor(r, &[4, 4, 3], -1.0, 1.0),
        |g, d| {
            let mask = Tensor::from_fn([4, 4, 3], |i| if (i[0] * 4 + i[1]) % 3 == 0 { 0.0 } else { 1.0 });
            let m = g.constant(mask.clone());
            let a = g.mul(d, m)?;
            let printable = PrintableSet::new(vec![
                [0.1, 0.2, 0.3],
                [0.9, 0.1, 0.5],
                [0.5, 0.5, 0.5],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 1.0],
            ])
            .unwrap();
            nps_graph(g, a, &mask, &printable)
        },
    ));
    {
        let cfg = cfg.clone();
        cases.push(check_scalar(
            "loss_disappearance",
            14,
            |r| random_tensor(r, &raw_shape, -2.0, 2.0),
            move |g, raw| {
                let d = decode(g, &cfg, raw)?;
                loss_disappearance(g, &d, 0, ClassScore::Joint, None)
            },
        ));
    }
    for (name, tau, seed) in [("loss_creation/localize", 0.99, 15), ("loss_creation/classify", 0.01, 16)] {
        let cfg = cfg.clone();
        cases.push(check_scalar(
            name,
            seed,
            |r| random_tensor(r, &raw_shape, -2.0, 2.0),
            move |g, raw| {
                let d = decode(g, &cfg, raw)?;
                let cands: Vec<_> =
                    [(0, 0), (0, 1), (1, 1)].iter().flat_map(|&(r, c)| (0..2).map(move |b| (r, c, b))).collect();
                Ok(loss_creation(g, &d, &cands, 0, tau)?.0)
            },
        ));
    }

    let model = tiny_detector();
    let stop = CanonicalObject::stop_sign(16);
    let spec = PerturbationSpec::zeros(MaskShape::OctagonPoster, &stop);
    let placements: Vec<Placement> = [(10.0, 0.0, 0.9, 1.1), (-25.0, 0.1, 0.7, 0.8)]
        .iter()
        .map(|&(rot, tx, s, gain)| {
            let t = TransformSample { rotation_deg: rot, translate: (tx, -0.05), scale: s };
            Placement::new(&BackgroundSet::new(3, 4).get(1, 16), &stop, &t, gain).unwrap()
        })
        .collect();
    let config = AttackConfig { lambda: 0.01, nps_weight: 1e-3, ..AttackConfig::default() };
    let mask = spec.mask.clone();
    let image = stop.image.clone();
    for (name, loss, seed) in
        [("objective/disappearance", SceneLoss::Disappearance, 17), ("objective/creation", SceneLoss::Creation, 18)]
    {
        let (model, stop, mask, placements, config) = (&model, &stop, &mask, &placements, &config);
        let image = &image;
        cases.push(check_scalar(
            name,
            seed,
            |r| {
                // keep object + delta strictly inside (0, 1) so the clip is inactive
                tv_safe_delta(r, mask, |i| {
                    let x = image.data()[i];
                    ((0.02 - x).max(-0.3), (0.98 - x).min(0.3))
                })
            },
            move |g, delta| {
                let w = model.bind(g, false);
                Ok(objective(g, model, &w, stop, mask, delta, placements, config, loss)?.total)
            },
        ));
    }
    cases
}
