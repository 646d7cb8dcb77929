//! Random comparison of optimal and baseline IoU bounds on the same
//! offset boxes, bucketed by baseline width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{h_map, offset_interval_to_region, Anchor, Decoder, DecoderKind, GroundTruth};
use crate::interval::Interval;
use crate::iou_bounds::{baseline_iou_bounds, optimal_iou_bounds, IoUInterval};

/// Offset box for one anchor plus a nearby ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub decoder: Decoder,
    pub anchor: Anchor,
    pub offsets: [Interval; 4],
    pub ground_truth: GroundTruth,
}

impl Instance {
    pub fn optimal(&self) -> Result<IoUInterval> {
        let r = offset_interval_to_region(&self.decoder, &self.offsets, &self.anchor)?;
        optimal_iou_bounds(&r, &self.ground_truth)
    }

    pub fn baseline(&self) -> IoUInterval {
        let corners = self.decoder.corner_intervals(&self.offsets, &self.anchor);
        baseline_iou_bounds(&corners, &self.ground_truth)
    }
}

pub fn random_decoder(rng: &mut impl Rng, kind: DecoderKind) -> Decoder {
    match kind {
        DecoderKind::Ssd => Decoder::Ssd {
            var1: rng.gen_range(0.05..0.2),
            var2: rng.gen_range(0.1..0.3),
        },
        DecoderKind::Yolov2 => Decoder::Yolov2,
        DecoderKind::Yolov3 => Decoder::Yolov3,
    }
}

/// SSD priors are pixel boxes; YOLO anchors sit in a grid cell at stride
/// 8, 16 or 32.
pub fn random_anchor(rng: &mut impl Rng, kind: DecoderKind) -> Anchor {
    let (p, scale) = match kind {
        DecoderKind::Ssd => (
            [
                rng.gen_range(40.0..260.0),
                rng.gen_range(40.0..260.0),
                rng.gen_range(16.0..128.0),
                rng.gen_range(16.0..128.0),
            ],
            1.0,
        ),
        DecoderKind::Yolov2 | DecoderKind::Yolov3 => (
            [
                rng.gen_range(0..13) as f64,
                rng.gen_range(0..13) as f64,
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.5..4.0),
            ],
            [8.0, 16.0, 32.0][rng.gen_range(0..3)],
        ),
    };
    Anchor::new(p, scale).expect("sampled anchors are positive")
}

/// Offsets centred in `[-1, 1]` with half-widths drawn from `half_width`;
/// the ground truth decodes a jittered copy of the centre offsets.
pub fn random_instance(rng: &mut impl Rng, kind: DecoderKind, half_width: (f64, f64)) -> Instance {
    let decoder = random_decoder(rng, kind);
    let anchor = random_anchor(rng, kind);
    let centre: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let offsets = centre.map(|c| {
        let r = if half_width.1 > half_width.0 {
            rng.gen_range(half_width.0..=half_width.1)
        } else {
            half_width.0
        };
        Interval::hull(c - r, c + r)
    });
    let jitter = centre.map(|c| c + rng.gen_range(-0.3..0.3));
    let g = h_map(&decoder.decode(jitter, &anchor));
    let ground_truth = GroundTruth::new(g, 0).expect("decoded boxes have positive size");
    Instance {
        decoder,
        anchor,
        offsets,
        ground_truth,
    }
}

/// Bucket edges on baseline width.
pub const BUCKETS: [(f64, f64); 11] = [
    (0.0, 0.01),
    (0.01, 0.10),
    (0.10, 0.20),
    (0.20, 0.30),
    (0.30, 0.40),
    (0.40, 0.50),
    (0.50, 0.60),
    (0.60, 0.70),
    (0.70, 0.80),
    (0.80, 0.90),
    (0.90, 1.00),
];

fn bucket_of(width: f64) -> usize {
    BUCKETS
        .iter()
        .position(|&(_, hi)| width < hi)
        .unwrap_or(BUCKETS.len() - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketRow {
    pub range: (f64, f64),
    pub count: usize,
    /// Mean of `(baseline - optimal) / baseline * 100` over the bucket;
    /// zero-width baselines count as 0.
    pub mean_improvement_pct: f64,
    pub mean_baseline_width: f64,
    pub mean_optimal_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TightnessReport {
    pub instances: usize,
    pub seed: u64,
    pub half_width: (f64, f64),
    pub dominance_violations: usize,
    pub buckets: Vec<BucketRow>,
}

/// Relative width reduction of `optimal` over `baseline`, in percent.
pub fn improvement_pct(baseline: &IoUInterval, optimal: &IoUInterval) -> f64 {
    let b = baseline.width();
    if b <= 0.0 {
        0.0
    } else {
        (b - optimal.width()) / b * 100.0
    }
}

/// `n` instances cycling through the three decoder families.
pub fn run_tightness(n: usize, seed: u64, half_width: (f64, f64)) -> Result<TightnessReport> {
    if n == 0 {
        return Err(Error::Validation("instance count must be >= 1".into()));
    }
    if !(0.0 <= half_width.0 && half_width.0 <= half_width.1 && half_width.1.is_finite()) {
        return Err(Error::Validation(format!("invalid width range {half_width:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [DecoderKind::Ssd, DecoderKind::Yolov2, DecoderKind::Yolov3];
    let mut sums = vec![(0usize, 0.0f64, 0.0f64, 0.0f64); BUCKETS.len()];
    let mut violations = 0;
    for k in 0..n {
        let inst = random_instance(&mut rng, kinds[k % kinds.len()], half_width);
        let opt = inst.optimal()?;
        let base = inst.baseline();
        if !opt.within(&base, 1e-9) {
            violations += 1;
        }
        let s = &mut sums[bucket_of(base.width())];
        s.0 += 1;
        s.1 += improvement_pct(&base, &opt);
        s.2 += base.width();
        s.3 += opt.width();
    }
    let buckets = BUCKETS
        .iter()
        .zip(sums)
        .map(|(&range, (count, imp, bw, ow))| {
            let mean = |v: f64| if count == 0 { 0.0 } else { v / count as f64 };
            BucketRow {
                range,
                count,
                mean_improvement_pct: mean(imp),
                mean_baseline_width: mean(bw),
                mean_optimal_width: mean(ow),
            }
        })
        .collect();
    Ok(TightnessReport {
        instances: n,
        seed,
        half_width,
        dominance_violations: violations,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_offsets_give_zero_improvement() {
        let r = run_tightness(1, 7, (0.0, 0.0)).unwrap();
        assert_eq!(r.dominance_violations, 0);
        let row = r.buckets.iter().find(|b| b.count == 1).unwrap();
        assert_eq!(row.range, BUCKETS[0]);
        assert_eq!(row.mean_improvement_pct, 0.0);
        assert!(row.mean_baseline_width < 1e-12);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(0.0), 0);
        assert_eq!(bucket_of(0.01), 1);
        assert_eq!(bucket_of(0.95), 10);
        assert_eq!(bucket_of(1.0), 10);
    }

    #[test]
    fn rejects_empty_runs() {
        assert!(run_tightness(0, 0, (0.0, 0.1)).is_err());
        assert!(run_tightness(3, 0, (0.2, 0.1)).is_err());
    }
}
