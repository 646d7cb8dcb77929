//! Robustness verification for single-object anchor-based detectors.
//!
//! Bounds are propagated through a feed-forward network over a
//! one-parameter family of perturbed inputs, decoded into a constraint
//! region on corner coordinates, and turned into exact IoU bounds by
//! enumerating a finite set of critical boxes. Branch-and-bound over the
//! perturbation parameter decides each query.

pub mod error;
pub mod geometry;
pub mod interval;
pub mod iou_bounds;
pub mod model;
pub mod oracle;
pub mod perturbation;
pub mod propagation;
pub mod tightness;
pub mod verifier;

pub use error::{Error, Result};
pub use geometry::{ConstraintRegion, CornerBox, GroundTruth};
pub use interval::{Interval, IntervalTensor};
pub use iou_bounds::IoUInterval;
pub use model::{load_model, ModelBundle};
pub use perturbation::{PerturbationKind, PerturbationSpec};
pub use verifier::{verify, Status, Verdict, VerificationQuery};

/// Engine version recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
