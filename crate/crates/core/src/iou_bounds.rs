//! IoU bounds over a constraint region.
//!
//! The optimal bounder evaluates IoU on a finite candidate set per plane
//! (x: `(z0, z2)`, y: `(z1, z3)`): the region corners, the intersections of
//! the ground-truth lines `z = g_lo` and `z = g_hi` with the region
//! boundary, and the ground-truth corner itself. The baseline bounder
//! evaluates the IoU formula with interval arithmetic on independent
//! corner intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, ConstraintRegion, CornerBox, GroundTruth};
use crate::interval::Interval;

/// Bounds on IoU, `0 <= lo <= hi <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct IoUInterval {
    lo: f64,
    hi: f64,
}

impl IoUInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Validation(format!("IoU bounds [{lo}, {hi}] not within [0, 1]")));
        }
        Ok(Self { lo, hi })
    }

    /// `[0, 1]`: no information.
    pub const FULL: Self = Self { lo: 0.0, hi: 1.0 };

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Whether `self` lies inside `other` up to `tol`.
    pub fn within(&self, other: &IoUInterval, tol: f64) -> bool {
        other.lo - tol <= self.lo && self.hi <= other.hi + tol
    }

    /// Smallest interval covering both.
    pub fn hull(&self, other: &IoUInterval) -> IoUInterval {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

impl TryFrom<[f64; 2]> for IoUInterval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<IoUInterval> for [f64; 2] {
    fn from(v: IoUInterval) -> Self {
        [v.lo, v.hi]
    }
}

impl std::fmt::Display for IoUInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:.6}, {:.6}]", self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Corner,
    GtIntersection,
    GtCorner,
}

/// Candidate `(z_lo, z_hi)` in one plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub lo: f64,
    pub hi: f64,
    pub kind: PointKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalPointSet {
    points: Vec<CriticalPoint>,
}

impl CriticalPointSet {
    pub fn points(&self) -> &[CriticalPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, kind: PointKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }
}

/// Candidates for one plane with `z_lo + z_hi in sum`, `z_hi - z_lo in diff`
/// and ground-truth coordinates `g_lo < g_hi`. Feasibility is not checked.
pub fn critical_points_plane(sum: Interval, diff: Interval, g_lo: f64, g_hi: f64) -> CriticalPointSet {
    let (l, u) = (sum.lo(), sum.hi());
    let (ld, ud) = (diff.lo(), diff.hi());
    let pt = |lo: f64, hi: f64, kind| CriticalPoint { lo, hi, kind };
    let mut points = Vec::with_capacity(13);
    for s in [u, l] {
        for d in [ud, ld] {
            points.push(pt((s - d) / 2.0, (s + d) / 2.0, PointKind::Corner));
        }
    }
    for (lo, hi) in [
        (g_lo, u - g_lo),
        (g_lo, l - g_lo),
        (g_lo, g_lo + ud),
        (g_lo, g_lo + ld),
        (u - g_hi, g_hi),
        (l - g_hi, g_hi),
        (g_hi - ud, g_hi),
        (g_hi - ld, g_hi),
    ] {
        points.push(pt(lo, hi, PointKind::GtIntersection));
    }
    points.push(pt(g_lo, g_hi, PointKind::GtCorner));
    CriticalPointSet { points }
}

fn slack(bound: f64) -> f64 {
    1e-9 * (1.0 + bound.abs())
}

fn feasible(p: &CriticalPoint, sum: Interval, diff: Interval) -> bool {
    let s = p.lo + p.hi;
    let d = p.hi - p.lo;
    s >= sum.lo() - slack(sum.lo())
        && s <= sum.hi() + slack(sum.hi())
        && d >= diff.lo() - slack(diff.lo())
        && d <= diff.hi() + slack(diff.hi())
}

/// Feasible, valid candidates of one plane.
fn plane_candidates(sum: Interval, diff: Interval, g_lo: f64, g_hi: f64) -> Vec<(f64, f64)> {
    critical_points_plane(sum, diff, g_lo, g_hi)
        .points
        .into_iter()
        .filter(|p| p.lo < p.hi && feasible(p, sum, diff))
        .map(|p| (p.lo, p.hi))
        .collect()
}

/// Exact IoU range of the boxes in `region` against `g`.
pub fn optimal_iou_bounds(region: &ConstraintRegion, g: &GroundTruth) -> Result<IoUInterval> {
    let gb = g.bbox();
    let xs = plane_candidates(region.sum_x(), region.diff_x(), gb.z0, gb.z2);
    let ys = plane_candidates(region.sum_y(), region.diff_y(), gb.z1, gb.z3);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InfeasibleRegion);
    }
    let mut max = 0.0f64;
    let mut min = 1.0f64;
    for &(z0, z2) in &xs {
        for &(z1, z3) in &ys {
            let v = iou(&CornerBox::new(z0, z1, z2, z3), gb);
            max = max.max(v);
            min = min.min(v);
        }
    }
    IoUInterval::new(min, max)
}

/// Interval-arithmetic IoU over independent corner intervals
/// `[z0, z1, z2, z3]`.
pub fn baseline_iou_bounds(corners: &[Interval; 4], g: &GroundTruth) -> IoUInterval {
    let gb = g.bbox();
    let axis = |lo: Interval, hi: Interval, g_lo: f64, g_hi: f64| {
        let i_lo = Interval::hull(lo.lo().max(g_lo), lo.hi().max(g_lo));
        let i_hi = Interval::hull(hi.lo().min(g_hi), hi.hi().min(g_hi));
        let overlap = Interval::hull(
            (i_hi.lo() - i_lo.hi()).max(0.0),
            (i_hi.hi() - i_lo.lo()).max(0.0),
        );
        let extent = Interval::hull((hi.lo() - lo.hi()).max(0.0), (hi.hi() - lo.lo()).max(0.0));
        (overlap, extent)
    };
    let (wi, wb) = axis(corners[0], corners[2], gb.z0, gb.z2);
    let (hi, hb) = axis(corners[1], corners[3], gb.z1, gb.z3);
    let ai = crate::interval::iv_mul(wi, hi);
    let ab = crate::interval::iv_mul(wb, hb);
    let ag = g.area();
    let union_lo = (ab.lo() + ag - ai.hi()).max(ag);
    let union_hi = (ab.hi() + ag - ai.lo()).max(union_lo);
    let lo = (ai.lo() / union_hi).clamp(0.0, 1.0);
    let hi = (ai.hi() / union_lo).clamp(0.0, 1.0);
    IoUInterval { lo: lo.min(hi), hi }
}
