//! Box formats, IoU, anchor decoders and the sum/difference constraint
//! region induced by offset bounds.
//!
//! Corner boxes are `(z0, z1, z2, z3)` = top-left `(x, y)` then bottom-right
//! `(x, y)`, in pixels. A decoder maps a raw offset 4-vector and an anchor to
//! a centre-format box; every component of every decoder is strictly
//! increasing in its own offset, which is what lets an offset box be
//! rewritten exactly as bounds on `z0 + z2`, `z1 + z3`, `z2 - z0`, `z3 - z1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{sigmoid, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct CornerBox {
    pub z0: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

impl From<[f64; 4]> for CornerBox {
    fn from(z: [f64; 4]) -> Self {
        Self::new(z[0], z[1], z[2], z[3])
    }
}

impl From<CornerBox> for [f64; 4] {
    fn from(b: CornerBox) -> Self {
        [b.z0, b.z1, b.z2, b.z3]
    }
}

impl CornerBox {
    pub const fn new(z0: f64, z1: f64, z2: f64, z3: f64) -> Self {
        Self { z0, z1, z2, z3 }
    }

    /// `z0 < z2` and `z1 < z3`.
    pub fn is_valid(&self) -> bool {
        self.z0 < self.z2 && self.z1 < self.z3
    }

    pub fn width(&self) -> f64 {
        self.z2 - self.z0
    }

    pub fn height(&self) -> f64 {
        self.z3 - self.z1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl CenterBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }
}

/// Annotated object: a positive-area box and its class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthRepr", into = "GroundTruthRepr")]
pub struct GroundTruth {
    bbox: CornerBox,
    class_id: usize,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRepr {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: usize,
}

impl TryFrom<GroundTruthRepr> for GroundTruth {
    type Error = Error;
    fn try_from(r: GroundTruthRepr) -> Result<Self> {
        GroundTruth::new(r.bbox.into(), r.class_id)
    }
}

impl From<GroundTruth> for GroundTruthRepr {
    fn from(g: GroundTruth) -> Self {
        Self {
            bbox: g.bbox.into(),
            class_id: g.class_id,
        }
    }
}

impl GroundTruth {
    pub fn new(bbox: CornerBox, class_id: usize) -> Result<Self> {
        let finite = [bbox.z0, bbox.z1, bbox.z2, bbox.z3].iter().all(|v| v.is_finite());
        if !finite || !bbox.is_valid() {
            return Err(Error::Validation(format!(
                "ground truth box {bbox:?} must have positive area"
            )));
        }
        Ok(Self { bbox, class_id })
    }

    pub fn bbox(&self) -> &CornerBox {
        &self.bbox
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn area(&self) -> f64 {
        area(&self.bbox)
    }
}

pub fn area(b: &CornerBox) -> f64 {
    (b.z3 - b.z1) * (b.z2 - b.z0)
}

/// Overlap width along x, clamped at zero.
pub fn overlap_x(b: &CornerBox, g: &CornerBox) -> f64 {
    (b.z2.min(g.z2) - b.z0.max(g.z0)).max(0.0)
}

/// Overlap height along y, clamped at zero.
pub fn overlap_y(b: &CornerBox, g: &CornerBox) -> f64 {
    (b.z3.min(g.z3) - b.z1.max(g.z1)).max(0.0)
}

/// Area of the intersection box.
pub fn intersection(b: &CornerBox, g: &CornerBox) -> f64 {
    overlap_x(b, g) * overlap_y(b, g)
}

pub fn iou(b: &CornerBox, g: &CornerBox) -> f64 {
    let inter = intersection(b, g);
    let union = area(b) + area(g) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn h_map(c: &CenterBox) -> CornerBox {
    CornerBox::new(
        c.cx - c.w / 2.0,
        c.cy - c.h / 2.0,
        c.cx + c.w / 2.0,
        c.cy + c.h / 2.0,
    )
}

pub fn h_inverse(b: &CornerBox) -> CenterBox {
    CenterBox::new(
        (b.z0 + b.z2) / 2.0,
        (b.z1 + b.z3) / 2.0,
        b.z2 - b.z0,
        b.z3 - b.z1,
    )
}

/// Prior box plus the scale that converts grid units to pixels.
///
/// For SSD `p` is a centre-format prior in pixels and `scale` is 1.
/// For YOLO `p = (cell_x, cell_y, anchor_w, anchor_h)` in grid units and
/// `scale` is the stride of the grid the anchor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub p: [f64; 4],
    pub scale: f64,
}

impl Anchor {
    pub fn new(p: [f64; 4], scale: f64) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Decoder(format!("anchor {p:?} is not finite")));
        }
        if !(p[2] > 0.0 && p[3] > 0.0) {
            return Err(Error::Decoder(format!(
                "anchor width/height must be positive, got {} x {}",
                p[2], p[3]
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Decoder(format!("anchor scale must be positive, got {scale}")));
        }
        Ok(Self { p, scale })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Ssd,
    Yolov2,
    Yolov3,
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderKind::Ssd => "ssd",
            DecoderKind::Yolov2 => "yolov2",
            DecoderKind::Yolov3 => "yolov3",
        })
    }
}

/// Architecture-specific offset-to-box map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoder {
    Ssd { var1: f64, var2: f64 },
    Yolov2,
    Yolov3,
}

impl Decoder {
    pub fn ssd(var1: f64, var2: f64) -> Result<Self> {
        if !(var1 > 0.0 && var2 > 0.0 && var1.is_finite() && var2.is_finite()) {
            return Err(Error::Decoder(format!(
                "ssd variances must be positive, got var1 = {var1}, var2 = {var2}"
            )));
        }
        Ok(Decoder::Ssd { var1, var2 })
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Ssd { .. } => DecoderKind::Ssd,
            Decoder::Yolov2 => DecoderKind::Yolov2,
            Decoder::Yolov3 => DecoderKind::Yolov3,
        }
    }

    pub fn center_x(&self, o0: f64, a: &Anchor) -> f64 {
        self.center(o0, a.p[0], a.p[2], a.scale)
    }

    pub fn center_y(&self, o1: f64, a: &Anchor) -> f64 {
        self.center(o1, a.p[1], a.p[3], a.scale)
    }

    pub fn width(&self, o2: f64, a: &Anchor) -> f64 {
        self.extent(o2, a.p[2], a.scale)
    }

    pub fn height(&self, o3: f64, a: &Anchor) -> f64 {
        self.extent(o3, a.p[3], a.scale)
    }

    fn center(&self, o: f64, pos: f64, size: f64, s: f64) -> f64 {
        match *self {
            Decoder::Ssd { var1, .. } => pos + o * var1 * size,
            Decoder::Yolov2 => (sigmoid(o) + pos) * s,
            Decoder::Yolov3 => (2.0 * sigmoid(o) - 0.5 + pos) * s,
        }
    }

    fn extent(&self, o: f64, size: f64, s: f64) -> f64 {
        match *self {
            Decoder::Ssd { var2, .. } => size * (o * var2).exp(),
            Decoder::Yolov2 => size * o.exp() * s,
            Decoder::Yolov3 => {
                let g = 2.0 * sigmoid(o);
                g * g * size * s
            }
        }
    }

    pub fn decode(&self, o: [f64; 4], a: &Anchor) -> CenterBox {
        CenterBox::new(
            self.center_x(o[0], a),
            self.center_y(o[1], a),
            self.width(o[2], a),
            self.height(o[3], a),
        )
    }

    /// Componentwise interval image of an offset box in centre format.
    pub fn decode_intervals(&self, o: &[Interval; 4], a: &Anchor) -> [Interval; 4] {
        [
            Interval::hull(self.center_x(o[0].lo(), a), self.center_x(o[0].hi(), a)),
            Interval::hull(self.center_y(o[1].lo(), a), self.center_y(o[1].hi(), a)),
            Interval::hull(self.width(o[2].lo(), a), self.width(o[2].hi(), a)),
            Interval::hull(self.height(o[3].lo(), a), self.height(o[3].hi(), a)),
        ]
    }

    /// Corner-coordinate intervals obtained by pushing the decoded centre
    /// intervals through `h` with interval arithmetic. Loses the coupling
    /// between corners; used by the baseline IoU bounder.
    pub fn corner_intervals(&self, o: &[Interval; 4], a: &Anchor) -> [Interval; 4] {
        let [cx, cy, w, h] = self.decode_intervals(o, a);
        [
            Interval::hull(cx.lo() - w.hi() / 2.0, cx.hi() - w.lo() / 2.0),
            Interval::hull(cy.lo() - h.hi() / 2.0, cy.hi() - h.lo() / 2.0),
            Interval::hull(cx.lo() + w.lo() / 2.0, cx.hi() + w.hi() / 2.0),
            Interval::hull(cy.lo() + h.lo() / 2.0, cy.hi() + h.hi() / 2.0),
        ]
    }
}

/// Offset vector to centre box. Preconditions live in the `Anchor` and
/// `Decoder` constructors.
pub fn decode(decoder: &Decoder, o: [f64; 4], anchor: &Anchor) -> CenterBox {
    decoder.decode(o, anchor)
}

/// Feasible corner boxes for an offset box, as bounds on
/// `z0 + z2`, `z1 + z3`, `z2 - z0` and `z3 - z1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRegion {
    sum_x: Interval,
    sum_y: Interval,
    diff_x: Interval,
    diff_y: Interval,
}

impl ConstraintRegion {
    pub fn new(sum_x: Interval, sum_y: Interval, diff_x: Interval, diff_y: Interval) -> Result<Self> {
        let all = [sum_x, sum_y, diff_x, diff_y];
        if !all.iter().all(|i| i.lo().is_finite() && i.hi().is_finite()) {
            return Err(Error::Decoder(format!("non-finite constraint region {all:?}")));
        }
        if !(diff_x.lo() > 0.0 && diff_y.lo() > 0.0) {
            return Err(Error::Decoder(format!(
                "region widths/heights must be positive, got {diff_x} / {diff_y}"
            )));
        }
        Ok(Self {
            sum_x,
            sum_y,
            diff_x,
            diff_y,
        })
    }

    /// The single box `b`.
    pub fn from_box(b: &CornerBox) -> Result<Self> {
        Self::new(
            Interval::point(b.z0 + b.z2),
            Interval::point(b.z1 + b.z3),
            Interval::point(b.z2 - b.z0),
            Interval::point(b.z3 - b.z1),
        )
    }

    pub fn sum_x(&self) -> Interval {
        self.sum_x
    }

    pub fn sum_y(&self) -> Interval {
        self.sum_y
    }

    pub fn diff_x(&self) -> Interval {
        self.diff_x
    }

    pub fn diff_y(&self) -> Interval {
        self.diff_y
    }

    /// Whether `b` satisfies all four constraints up to `tol`.
    pub fn contains(&self, b: &CornerBox, tol: f64) -> bool {
        let within = |iv: Interval, v: f64| iv.lo() - tol <= v && v <= iv.hi() + tol;
        within(self.sum_x, b.z0 + b.z2)
            && within(self.sum_y, b.z1 + b.z3)
            && within(self.diff_x, b.z2 - b.z0)
            && within(self.diff_y, b.z3 - b.z1)
    }
}

/// Rewrites an offset box as a constraint region on corner coordinates.
/// Exact, since each decoder component is strictly increasing in its offset.
pub fn offset_interval_to_region(
    decoder: &Decoder,
    o: &[Interval; 4],
    anchor: &Anchor,
) -> Result<ConstraintRegion> {
    let [cx, cy, w, h] = decoder.decode_intervals(o, anchor);
    ConstraintRegion::new(cx.scale(2.0), cy.scale(2.0), w, h)
}
