//! Brute-force references: grid IoU sweeps, sampled network outputs and
//! sampling-based falsification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{iou, ConstraintRegion, CornerBox, GroundTruth};
use crate::interval::{Interval, Matrix};
use crate::model::{Layer, Network};
use crate::perturbation::InputSet;
use crate::verifier::{violation, Counterexample, VerificationQuery};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub resolution_per_plane: usize,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(resolution_per_plane: usize) -> Result<Self> {
        if resolution_per_plane < 2 {
            return Err(Error::Validation(format!(
                "grid resolution must be >= 2, got {resolution_per_plane}"
            )));
        }
        Ok(Self {
            resolution_per_plane,
            seed: 0,
        })
    }
}

/// `n` evenly spaced values from `iv.lo()` to `iv.hi()`, both included.
fn linspace(iv: Interval, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                iv.hi()
            } else {
                iv.lo() + (iv.hi() - iv.lo()) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// A grid point of one plane with its overlap with the ground truth and
/// its extent.
#[derive(Clone, Copy, Debug)]
struct PlanePoint {
    lo: f64,
    hi: f64,
    overlap: f64,
    extent: f64,
}

fn plane_point(s: f64, d: f64, g_lo: f64, g_hi: f64) -> PlanePoint {
    let lo = (s - d) / 2.0;
    let hi = (s + d) / 2.0;
    PlanePoint {
        lo,
        hi,
        overlap: (hi.min(g_hi) - lo.max(g_lo)).max(0.0),
        extent: hi - lo,
    }
}

/// Grid points of one plane that can realize the sampled extrema.
///
/// IoU increases with the overlap in each plane and decreases with the
/// extent, so for the maximum a point is dominated by any point with at
/// least its overlap and at most its extent (and conversely for the
/// minimum). Returns the two non-dominated sets.
fn plane_frontiers(sum: Interval, diff: Interval, g_lo: f64, g_hi: f64, n: usize) -> (Vec<PlanePoint>, Vec<PlanePoint>) {
    let ss = linspace(sum, n);
    let ds = linspace(diff, n);
    let mut pool = Vec::with_capacity(2 * n + 4 * n + 1);
    let inside = |iv: Interval, v: f64| iv.lo() <= v && v <= iv.hi();
    for &d in &ds {
        let mut best: Option<PlanePoint> = None;
        let mut worst: Option<PlanePoint> = None;
        for &s in &ss {
            let p = plane_point(s, d, g_lo, g_hi);
            if best.is_none_or(|b| p.overlap > b.overlap) {
                best = Some(p);
            }
            if worst.is_none_or(|w| p.overlap < w.overlap) {
                worst = Some(p);
            }
        }
        pool.extend(best);
        pool.extend(worst);
        // Ground-truth-aligned points at this width.
        for s in [2.0 * g_lo + d, 2.0 * g_hi - d] {
            if inside(sum, s) {
                pool.push(plane_point(s, d, g_lo, g_hi));
            }
        }
    }
    for &s in &ss {
        for d in [s - 2.0 * g_lo, 2.0 * g_hi - s] {
            if inside(diff, d) {
                pool.push(plane_point(s, d, g_lo, g_hi));
            }
        }
    }
    let (s, d) = (g_lo + g_hi, g_hi - g_lo);
    if inside(sum, s) && inside(diff, d) {
        pool.push(plane_point(s, d, g_lo, g_hi));
    }

    let mut by_extent = pool;
    by_extent.sort_by(|a, b| a.extent.total_cmp(&b.extent).then(b.overlap.total_cmp(&a.overlap)));
    let mut for_max = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for p in &by_extent {
        if p.overlap > best {
            best = p.overlap;
            for_max.push(*p);
        }
    }
    by_extent.sort_by(|a, b| b.extent.total_cmp(&a.extent).then(a.overlap.total_cmp(&b.overlap)));
    let mut for_min = Vec::new();
    let mut worst = f64::INFINITY;
    for p in &by_extent {
        if p.overlap < worst {
            worst = p.overlap;
            for_min.push(*p);
        }
    }
    (for_max, for_min)
}

/// Sampled `(min, max)` IoU over a regular `(sum, diff)` grid per plane,
/// augmented with the region corners and points on the ground-truth lines.
pub fn grid_iou_extrema(region: &ConstraintRegion, g: &GroundTruth, grid: &GridSpec) -> (f64, f64) {
    let n = grid.resolution_per_plane.max(2);
    let gb = g.bbox();
    let (xmax, xmin) = plane_frontiers(region.sum_x(), region.diff_x(), gb.z0, gb.z2, n);
    let (ymax, ymin) = plane_frontiers(region.sum_y(), region.diff_y(), gb.z1, gb.z3, n);
    let extreme = |xs: &[PlanePoint], ys: &[PlanePoint], init: f64, pick: fn(f64, f64) -> f64| {
        let mut acc = init;
        for x in xs {
            for y in ys {
                acc = pick(acc, iou(&CornerBox::new(x.lo, y.lo, x.hi, y.hi), gb));
            }
        }
        acc
    };
    let max = extreme(&xmax, &ymax, f64::NEG_INFINITY, f64::max);
    let min = extreme(&xmin, &ymin, f64::INFINITY, f64::min);
    (min, max)
}

/// Every box of the full grid, for cross-checking the pruned sweep.
pub fn grid_iou_extrema_exhaustive(region: &ConstraintRegion, g: &GroundTruth, n: usize) -> (f64, f64) {
    let gb = g.bbox();
    let plane = |sum, diff, g_lo, g_hi| -> Vec<PlanePoint> {
        let ds = linspace(diff, n);
        linspace(sum, n)
            .into_iter()
            .flat_map(|s| ds.iter().map(move |&d| plane_point(s, d, g_lo, g_hi)))
            .collect()
    };
    let xs = plane(region.sum_x(), region.diff_x(), gb.z0, gb.z2);
    let ys = plane(region.sum_y(), region.diff_y(), gb.z1, gb.z3);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in &xs {
        for y in &ys {
            let v = iou(&CornerBox::new(x.lo, y.lo, x.hi, y.hi), gb);
            min = min.min(v);
            max = max.max(v);
        }
    }
    (min, max)
}

/// Parameter values to sample: the endpoints first, then uniform draws.
pub fn sample_ts(t: Interval, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = Vec::with_capacity(n);
    ts.extend([t.lo(), t.hi()].into_iter().take(n));
    while ts.len() < n {
        ts.push(if t.is_degenerate() { t.lo() } else { rng.gen_range(t.lo()..=t.hi()) });
    }
    ts
}

/// Per-output `(min, max)` of the network over `n` sampled members of `set`.
pub fn sample_outputs(net: &Network, set: &InputSet, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::Validation("sample count must be >= 1".into()));
    }
    let mut env = vec![(f64::INFINITY, f64::NEG_INFINITY); net.output_len()];
    for t in sample_ts(set.t(), n, seed) {
        let y = net.forward(set.realize(t).data())?;
        for (e, v) in env.iter_mut().zip(y) {
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    Ok(env)
}

/// First sampled parameter value whose prediction is incorrect.
pub fn falsify(query: &VerificationQuery, n: usize, seed: u64) -> Result<Option<Counterexample>> {
    if n == 0 {
        return Err(Error::Validation("sample count must be >= 1".into()));
    }
    let set = query.input_set()?;
    for t in sample_ts(set.t(), n, seed) {
        let image = set.realize(t);
        let detection = crate::model::predict(query.model(), &image, query.tau_class())?;
        if let Some(v) = violation(detection.as_ref(), query.ground_truth(), query.tau_iou()) {
            return Ok(Some(Counterexample {
                t,
                image,
                violation: v,
                detection,
            }));
        }
    }
    Ok(None)
}

/// Random feed-forward network on a small `[C, H, W]` input: an optional
/// average pool (or a conv when `allow_conv`), then up to `max_dense`
/// dense layers of width at most `max_width` separated by ReLU or
/// LeakyReLU.
pub fn random_network(rng: &mut impl Rng, max_dense: usize, max_width: usize, allow_conv: bool) -> Network {
    let c = rng.gen_range(1..=2);
    let hw = [4, 6, 8][rng.gen_range(0..3)];
    let mut layers = Vec::new();
    let mut shape = vec![c, hw, hw];
    match rng.gen_range(0..3) {
        0 => {
            layers.push(Layer::AvgPool2d { window: 2, stride: 2 });
            shape = vec![c, hw / 2, hw / 2];
        }
        1 if allow_conv => {
            let oc = rng.gen_range(1..=3);
            layers.push(Layer::Conv2d {
                out_channels: oc,
                in_channels: c,
                kernel: [3, 3],
                stride: 1,
                padding: 1,
                weights: (0..oc * c * 9).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                bias: (0..oc).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            });
            layers.push(random_activation(rng));
            shape = vec![oc, hw, hw];
        }
        _ => {}
    }
    layers.push(Layer::Flatten);
    let mut width: usize = shape.iter().product();
    let n_dense = rng.gen_range(1..=max_dense.max(1));
    for k in 0..n_dense {
        let out = rng.gen_range(2..=max_width.max(2));
        let scale = 1.0 / (width as f64).sqrt();
        let w: Vec<f64> = (0..out * width).map(|_| rng.gen_range(-2.0..2.0) * scale).collect();
        let b: Vec<f64> = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(Layer::Dense {
            weights: Matrix::new(out, width, w).expect("sizes match"),
            bias: b,
        });
        if k + 1 < n_dense {
            layers.push(random_activation(rng));
        }
        width = out;
    }
    Network::new(vec![c, hw, hw], layers).expect("generated shapes are consistent")
}

fn random_activation(rng: &mut impl Rng) -> Layer {
    if rng.gen_bool(0.5) {
        Layer::Relu
    } else {
        Layer::LeakyRelu {
            alpha: rng.gen_range(0.0..=1.0),
        }
    }
}
