//! Query files: parsing, validation and expansion into verification rows.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use detcert::geometry::GroundTruth;
use detcert::model::{load_image, load_model};
use detcert::perturbation::PerturbationSpec;
use detcert::verifier::{Bounding, Propagation, VerificationQuery, VerifierOptions};
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFile {
    pub schema_version: u32,
    pub model: PathBuf,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub images: Vec<ImageEntry>,
    pub tau_iou: f64,
    pub tau_class: f64,
    #[serde(default)]
    pub perturbation: Option<PerturbationEntry>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationEntry>,
    #[serde(default)]
    pub budgets: Vec<f64>,
    #[serde(default)]
    pub options: OptionsEntry,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub image: PathBuf,
    pub ground_truth: GroundTruth,
}

/// A perturbation whose epsilon may come from the budget list instead.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEntry {
    pub kind: detcert::PerturbationKind,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub angle_deg: f64,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
}

fn default_kernel() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsEntry {
    #[serde(default)]
    pub bounding: Bounding,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_depth() -> usize {
    20
}

fn default_timeout() -> f64 {
    1800.0
}

impl Default for OptionsEntry {
    fn default() -> Self {
        Self {
            bounding: Bounding::default(),
            propagation: Propagation::default(),
            max_depth: default_max_depth(),
            timeout: default_timeout(),
            seed: 0,
        }
    }
}

/// Command-line settings that take precedence over the query file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub timeout: Option<f64>,
    pub bounding: Option<Bounding>,
    pub propagation: Option<Propagation>,
    pub max_depth: Option<usize>,
}

/// One `(image, perturbation, epsilon)` verification job.
#[derive(Debug, Clone)]
pub struct Row {
    pub image: String,
    pub query: VerificationQuery,
}

#[derive(Debug)]
pub struct Plan {
    pub rows: Vec<Row>,
    pub seed: u64,
}

impl PerturbationEntry {
    fn label(&self) -> String {
        match self.kind {
            detcert::PerturbationKind::MotionBlur => {
                format!("motionblur(angle={}, k={})", self.angle_deg, self.kernel_size)
            }
            k => k.to_string(),
        }
    }
}

pub fn perturbation_label(spec: &PerturbationSpec) -> String {
    PerturbationEntry {
        kind: spec.kind,
        epsilon: Some(spec.epsilon),
        angle_deg: spec.angle_deg,
        kernel_size: spec.kernel_size,
    }
    .label()
}

pub fn read_query_file(path: &Path) -> Result<QueryFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading query file {}", path.display()))?;
    let q: QueryFile =
        serde_json::from_str(&text).with_context(|| format!("parsing query file {}", path.display()))?;
    ensure!(
        q.schema_version == SCHEMA_VERSION,
        "unsupported schema_version {} (expected {SCHEMA_VERSION})",
        q.schema_version
    );
    Ok(q)
}

/// Loads every referenced file, validates all rows, and only then returns.
pub fn plan(path: &Path, overrides: &Overrides) -> Result<Plan> {
    let q = read_query_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut images = q.images;
    match (q.image, q.ground_truth) {
        (Some(image), Some(ground_truth)) => images.insert(0, ImageEntry { image, ground_truth }),
        (None, None) => {}
        _ => bail!("`image` and `ground_truth` must be given together"),
    }
    ensure!(!images.is_empty(), "query names no image");

    let mut perturbations = q.perturbations;
    perturbations.extend(q.perturbation);
    ensure!(!perturbations.is_empty(), "query names no perturbation");

    let opts = q.options;
    let seed = overrides.seed.unwrap_or(opts.seed);
    let timeout = overrides.timeout.unwrap_or(opts.timeout);
    ensure!(timeout > 0.0 && timeout.is_finite(), "timeout must be positive, got {timeout}");
    let options = VerifierOptions {
        bounding: overrides.bounding.unwrap_or(opts.bounding),
        propagation: overrides.propagation.unwrap_or(opts.propagation),
        max_depth: overrides.max_depth.unwrap_or(opts.max_depth),
        timeout: Duration::from_secs_f64(timeout),
    };

    let model_path = resolve(&q.model);
    let model = Arc::new(load_model(&model_path).with_context(|| format!("loading model {}", model_path.display()))?);

    let mut loaded = HashMap::new();
    let mut rows = Vec::new();
    for entry in &images {
        let image_path = resolve(&entry.image);
        if !loaded.contains_key(&image_path) {
            let img = load_image(&image_path).with_context(|| format!("loading image {}", image_path.display()))?;
            loaded.insert(image_path.clone(), img);
        }
        let image = &loaded[&image_path];
        for p in &perturbations {
            let budgets: Vec<f64> = if q.budgets.is_empty() {
                match p.epsilon {
                    Some(e) => vec![e],
                    None => bail!("perturbation {} has no epsilon and the query has no budgets", p.label()),
                }
            } else {
                q.budgets.clone()
            };
            for eps in budgets {
                let spec = PerturbationSpec {
                    kind: p.kind,
                    epsilon: eps,
                    angle_deg: p.angle_deg,
                    kernel_size: p.kernel_size,
                };
                let query = VerificationQuery::new(
                    model.clone(),
                    image.clone(),
                    entry.ground_truth,
                    q.tau_iou,
                    q.tau_class,
                    spec,
                    options,
                )
                .with_context(|| format!("query for {} ({}, eps {eps})", entry.image.display(), p.label()))?;
                rows.push(Row {
                    image: entry.image.display().to_string(),
                    query,
                });
            }
        }
    }
    Ok(Plan { rows, seed })
}
