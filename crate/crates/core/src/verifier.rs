//! Branch-and-bound robustness verification over a perturbation parameter.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, offset_interval_to_region, GroundTruth};
use crate::interval::{sigmoid, Interval, IntervalTensor, Monotonicity};
use crate::iou_bounds::{baseline_iou_bounds, optimal_iou_bounds, IoUInterval};
use crate::model::{DetectorHead, Detection, Image, ModelBundle};
use crate::perturbation::{build_input_set, InputSet, PerturbationSpec};
use crate::propagation::{ibp_forward, symbolic_bounds};

/// Nodes with more candidate boxes than this are split without bounding IoU.
pub const MAX_CANDIDATES: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bounding {
    #[default]
    Optimal,
    Baseline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    Ibp,
    #[default]
    Backsub,
}

impl std::fmt::Display for Bounding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bounding::Optimal => "optimal",
            Bounding::Baseline => "baseline",
        })
    }
}

impl std::fmt::Display for Propagation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Propagation::Ibp => "ibp",
            Propagation::Backsub => "backsub",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifierOptions {
    pub bounding: Bounding,
    pub propagation: Propagation,
    pub max_depth: usize,
    pub timeout: Duration,
}

impl Default for VerifierOptions {
    fn default() -> Self {
        Self {
            bounding: Bounding::Optimal,
            propagation: Propagation::Backsub,
            max_depth: 20,
            timeout: Duration::from_secs(1800),
        }
    }
}

/// Why a prediction fails the correctness conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoDetection,
    WrongClass { predicted: usize },
    LowIou { iou: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoDetection => f.write_str("no box above the confidence threshold"),
            Violation::WrongClass { predicted } => write!(f, "predicted class {predicted}"),
            Violation::LowIou { iou } => write!(f, "IoU {iou:.6} below threshold"),
        }
    }
}

/// First failed correctness condition for a concrete prediction.
pub fn violation(detection: Option<&Detection>, g: &GroundTruth, tau_iou: f64) -> Option<Violation> {
    let Some(d) = detection else {
        return Some(Violation::NoDetection);
    };
    if d.class_id != g.class_id() {
        return Some(Violation::WrongClass { predicted: d.class_id });
    }
    let v = iou(&d.bbox, g.bbox());
    (v < tau_iou).then_some(Violation::LowIou { iou: v })
}

/// Runs the detector on `image` and checks it against `g`.
pub fn check_correct(
    model: &ModelBundle,
    image: &Image,
    g: &GroundTruth,
    tau_iou: f64,
    tau_class: f64,
) -> Result<Option<Violation>> {
    let d = crate::model::predict(model, image, tau_class)?;
    Ok(violation(d.as_ref(), g, tau_iou))
}

#[derive(Clone, Debug)]
pub struct VerificationQuery {
    model: Arc<ModelBundle>,
    image: Image,
    ground_truth: GroundTruth,
    tau_iou: f64,
    tau_class: f64,
    perturbation: PerturbationSpec,
    options: VerifierOptions,
}

impl VerificationQuery {
    /// Validates thresholds and shapes, and rejects images the model
    /// already gets wrong.
    pub fn new(
        model: Arc<ModelBundle>,
        image: Image,
        ground_truth: GroundTruth,
        tau_iou: f64,
        tau_class: f64,
        perturbation: PerturbationSpec,
        options: VerifierOptions,
    ) -> Result<Self> {
        if !(tau_iou > 0.0 && tau_iou <= 1.0) {
            return Err(Error::Query(format!("tau_iou must lie in (0, 1], got {tau_iou}")));
        }
        if !(tau_class > 0.0 && tau_class < 1.0) {
            return Err(Error::Query(format!("tau_class must lie in (0, 1), got {tau_class}")));
        }
        if ground_truth.class_id() >= model.head().n_classes() {
            return Err(Error::Query(format!(
                "ground-truth class {} but the model has {} classes",
                ground_truth.class_id(),
                model.head().n_classes()
            )));
        }
        if image.shape() != model.input_shape() {
            return Err(Error::shape(
                format!("image {:?}", model.input_shape()),
                format!("{:?}", image.shape()),
            ));
        }
        build_input_set(&image, &perturbation)?;
        if let Some(v) = check_correct(&model, &image, &ground_truth, tau_iou, tau_class)? {
            return Err(Error::Query(format!("clean image is not correctly detected: {v}")));
        }
        Ok(Self {
            model,
            image,
            ground_truth,
            tau_iou,
            tau_class,
            perturbation,
            options,
        })
    }

    pub fn model(&self) -> &ModelBundle {
        &self.model
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.ground_truth
    }

    pub fn tau_iou(&self) -> f64 {
        self.tau_iou
    }

    pub fn tau_class(&self) -> f64 {
        self.tau_class
    }

    pub fn perturbation(&self) -> &PerturbationSpec {
        &self.perturbation
    }

    pub fn options(&self) -> &VerifierOptions {
        &self.options
    }

    /// Same query with a different perturbation budget.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut q = self.clone();
        q.perturbation.epsilon = epsilon;
        q.perturbation.validate()?;
        Ok(q)
    }

    pub fn input_set(&self) -> Result<InputSet> {
        build_input_set(&self.image, &self.perturbation)
    }

    /// Correctness of the prediction on `image`.
    pub fn check(&self, image: &Image) -> Result<Option<Violation>> {
        check_correct(&self.model, image, &self.ground_truth, self.tau_iou, self.tau_class)
    }
}

/// Bounds for one anchor's head outputs. Scores are sigmoid-mapped.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateBox {
    pub box_index: usize,
    pub conf_bounds: Interval,
    pub class_bounds: Vec<Interval>,
    pub offset_bounds: [Interval; 4],
    pub iou_bounds: Option<IoUInterval>,
}

/// Per-anchor bounds read from head-layout output bounds.
pub fn box_bounds(head: &DetectorHead, out: &IntervalTensor) -> Vec<CandidateBox> {
    let score = |k: usize| crate::interval::iv_monotone(sigmoid, Monotonicity::Increasing, out.get(k));
    head.slots()
        .iter()
        .enumerate()
        .map(|(i, s)| CandidateBox {
            box_index: i,
            conf_bounds: score(s.objectness),
            class_bounds: s.classes.iter().map(|&k| score(k)).collect(),
            offset_bounds: s.offsets.map(|k| out.get(k)),
            iou_bounds: None,
        })
        .collect()
}

/// Indices whose confidence upper bound reaches the largest lower bound.
pub fn select_candidates(conf: &[Interval]) -> Vec<usize> {
    let best_lo = conf.iter().map(|c| c.lo()).fold(f64::NEG_INFINITY, f64::max);
    (0..conf.len()).filter(|&i| conf[i].hi() >= best_lo).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "class", rename_all = "snake_case")]
pub enum ClassVerdict {
    /// Every candidate provably predicts the ground-truth class.
    Agree,
    /// Every candidate provably predicts some other class.
    ProvablyWrong,
    Ambiguous,
}

/// Class `c` such that `c`'s lower bound beats every other upper bound.
fn dominant_class(bounds: &[Interval]) -> Option<usize> {
    (0..bounds.len()).find(|&c| {
        bounds
            .iter()
            .enumerate()
            .all(|(k, b)| k == c || bounds[c].lo() > b.hi())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HighestBox {
    pub iou: IoUInterval,
    pub score: Interval,
    pub class_verdict: ClassVerdict,
    pub candidates: Vec<CandidateBox>,
}

/// IoU bounds for one candidate; falls back to `[0, 1]` when the decoded
/// region is not finite (exponent overflow on huge offset bounds).
fn candidate_iou(head: &DetectorHead, c: &CandidateBox, g: &GroundTruth, bounding: Bounding) -> IoUInterval {
    let anchor = &head.anchors()[c.box_index];
    match bounding {
        Bounding::Optimal => offset_interval_to_region(head.decoder(), &c.offset_bounds, anchor)
            .and_then(|r| optimal_iou_bounds(&r, g))
            .unwrap_or(IoUInterval::FULL),
        Bounding::Baseline => {
            let corners = head.decoder().corner_intervals(&c.offset_bounds, anchor);
            let finite = corners.iter().all(|i| i.lo().is_finite() && i.hi().is_finite());
            if finite {
                baseline_iou_bounds(&corners, g)
            } else {
                IoUInterval::FULL
            }
        }
    }
}

/// Aggregated IoU, score and class information over the boxes that could
/// be selected for some input in the node.
pub fn get_highest_box(head: &DetectorHead, out: &IntervalTensor, g: &GroundTruth, bounding: Bounding) -> HighestBox {
    let boxes = box_bounds(head, out);
    let conf: Vec<Interval> = boxes.iter().map(|b| b.conf_bounds).collect();
    let idx = select_candidates(&conf);
    highest_box_from(head, boxes, &idx, g, bounding)
}

fn highest_box_from(
    head: &DetectorHead,
    boxes: Vec<CandidateBox>,
    idx: &[usize],
    g: &GroundTruth,
    bounding: Bounding,
) -> HighestBox {
    let score = Interval::hull(
        boxes.iter().map(|b| b.conf_bounds.lo()).fold(f64::NEG_INFINITY, f64::max),
        boxes.iter().map(|b| b.conf_bounds.hi()).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut candidates: Vec<CandidateBox> = idx.iter().map(|&i| boxes[i].clone()).collect();
    let mut agg: Option<IoUInterval> = None;
    for c in &mut candidates {
        let b = candidate_iou(head, c, g, bounding);
        c.iou_bounds = Some(b);
        agg = Some(agg.map_or(b, |a| a.hull(&b)));
    }
    let classes: Vec<Option<usize>> = candidates.iter().map(|c| dominant_class(&c.class_bounds)).collect();
    let class_verdict = if classes.iter().all(|c| *c == Some(g.class_id())) {
        ClassVerdict::Agree
    } else if classes.iter().all(|c| c.is_some_and(|k| k != g.class_id())) {
        ClassVerdict::ProvablyWrong
    } else {
        ClassVerdict::Ambiguous
    };
    HighestBox {
        iou: agg.unwrap_or(IoUInterval::FULL),
        score,
        class_verdict,
        candidates,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Robust,
    Nonrobust,
    Unknown,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Robust => "ROBUST",
            Status::Nonrobust => "NONROBUST",
            Status::Unknown => "UNKNOWN",
        })
    }
}

pub fn decide(iou: &IoUInterval, score: &Interval, class: ClassVerdict, tau_iou: f64, tau_class: f64) -> Status {
    if iou.lo() >= tau_iou && score.lo() >= tau_class && class == ClassVerdict::Agree {
        Status::Robust
    } else if iou.hi() < tau_iou || score.hi() < tau_class || class == ClassVerdict::ProvablyWrong {
        Status::Nonrobust
    } else {
        Status::Unknown
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counterexample {
    pub t: f64,
    pub image: Image,
    pub violation: Violation,
    pub detection: Option<Detection>,
}

/// One evaluated node of the search tree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRecord {
    /// `0` = lower half, `1` = upper half, from the root.
    pub path: String,
    pub depth: usize,
    pub t: Interval,
    pub status: Status,
    pub candidates: usize,
    pub iou: Option<IoUInterval>,
    pub score: Interval,
    pub propagation_secs: f64,
    pub bounding_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub branches_explored: usize,
    pub max_depth_reached: usize,
    pub wall_time: f64,
    pub timed_out: bool,
    pub counterexample: Option<Counterexample>,
    pub log: Vec<BranchRecord>,
}

/// Output bounds of the network over the images of `set`.
pub fn propagate(model: &ModelBundle, set: &InputSet, propagation: Propagation) -> Result<IntervalTensor> {
    let net = model.network();
    let input = set.concretize();
    let ibp = ibp_forward(net, &input)?.pop().unwrap_or(input.clone());
    let ibp = ibp.reshape(vec![net.output_len()])?;
    match propagation {
        Propagation::Ibp => Ok(ibp),
        Propagation::Backsub => {
            let sym = symbolic_bounds(net, &input)?;
            let seg = sym.concretize_affine(set.base().data(), set.direction(), set.t())?;
            seg.intersect(&ibp)
        }
    }
}

struct Node {
    path: String,
    depth: usize,
    set: InputSet,
}

/// Depth-first branch-and-bound on the perturbation parameter, lower half
/// first.
pub fn verify(query: &VerificationQuery) -> Result<Verdict> {
    let start = Instant::now();
    let opts = query.options;
    let g = &query.ground_truth;
    let head = query.model.head();
    let mut stack = vec![Node {
        path: String::new(),
        depth: 0,
        set: query.input_set()?,
    }];
    let mut log = Vec::new();
    let mut max_depth = 0;
    let mut open_leaf = false;
    let mut timed_out = false;

    let finish = |status, log: Vec<BranchRecord>, max_depth, timed_out, cex| Verdict {
        status,
        branches_explored: log.len(),
        max_depth_reached: max_depth,
        wall_time: start.elapsed().as_secs_f64(),
        timed_out,
        counterexample: cex,
        log,
    };

    while let Some(node) = stack.pop() {
        if start.elapsed() >= opts.timeout {
            timed_out = true;
            break;
        }
        max_depth = max_depth.max(node.depth);

        let t0 = Instant::now();
        let out = propagate(&query.model, &node.set, opts.propagation)?;
        let propagation_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let boxes = box_bounds(head, &out);
        let conf: Vec<Interval> = boxes.iter().map(|b| b.conf_bounds).collect();
        let idx = select_candidates(&conf);
        let (status, iou_bounds, score) = if idx.len() > MAX_CANDIDATES {
            let score = Interval::hull(
                conf.iter().map(|c| c.lo()).fold(f64::NEG_INFINITY, f64::max),
                conf.iter().map(|c| c.hi()).fold(f64::NEG_INFINITY, f64::max),
            );
            (Status::Unknown, None, score)
        } else {
            let hb = highest_box_from(head, boxes, &idx, g, opts.bounding);
            let s = decide(&hb.iou, &hb.score, hb.class_verdict, query.tau_iou, query.tau_class);
            (s, Some(hb.iou), hb.score)
        };
        let bounding_secs = t1.elapsed().as_secs_f64();

        log.push(BranchRecord {
            path: node.path.clone(),
            depth: node.depth,
            t: node.set.t(),
            status,
            candidates: idx.len(),
            iou: iou_bounds,
            score,
            propagation_secs,
            bounding_secs,
        });

        if status == Status::Robust {
            continue;
        }
        // Refuted or undecided: try the midpoint concretely.
        let t = node.set.t().mid();
        let image = node.set.realize(t);
        let detection = crate::model::predict(&query.model, &image, query.tau_class)?;
        if let Some(v) = violation(detection.as_ref(), g, query.tau_iou) {
            let cex = Counterexample {
                t,
                image,
                violation: v,
                detection,
            };
            return Ok(finish(Status::Nonrobust, log, max_depth, false, Some(cex)));
        }
        if node.depth < opts.max_depth && !node.set.t().is_degenerate() {
            let (lo, hi) = node.set.bisect()?;
            for (half, bit) in [(hi, '1'), (lo, '0')] {
                stack.push(Node {
                    path: format!("{}{bit}", node.path),
                    depth: node.depth + 1,
                    set: half,
                });
            }
        } else {
            open_leaf = true;
        }
    }
    let status = if timed_out || open_leaf {
        Status::Unknown
    } else {
        Status::Robust
    };
    Ok(finish(status, log, max_depth, timed_out, None))
}
