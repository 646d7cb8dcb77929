//! JSON and CSV reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use detcert::model::Image;
use detcert::tightness::TightnessReport;
use detcert::verifier::{BranchRecord, Counterexample, Verdict, Violation};
use serde::Serialize;

use crate::query::{perturbation_label, Row, SCHEMA_VERSION};

#[derive(Serialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub engine_version: &'static str,
    pub seed: u64,
}

impl Metadata {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            engine_version: detcert::VERSION,
            seed,
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    #[serde(flatten)]
    meta: &'a Metadata,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `body`'s fields after the run metadata. `body` must serialize
/// as a map.
pub fn write_json<T: Serialize>(path: &Path, meta: &Metadata, body: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &Document { meta, body })?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
pub struct Rows<'a, T: Serialize> {
    pub rows: &'a [T],
}

#[derive(Clone, Serialize)]
pub struct CounterexampleSummary {
    pub t: f64,
    pub violation: Violation,
}

#[derive(Serialize)]
pub struct VerifyRow {
    pub image: String,
    pub perturbation: String,
    pub epsilon: f64,
    pub verdict: String,
    pub wall_time: Option<f64>,
    pub branches: usize,
    pub depth: usize,
    pub bounding: String,
    pub propagation: String,
    pub timed_out: bool,
    pub counterexample: Option<CounterexampleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_log: Option<Vec<BranchRecord>>,
}

/// One CSV line; same column order as the JSON rows.
#[derive(Serialize)]
pub struct FlatVerifyRow<'a> {
    pub image: &'a str,
    pub perturbation: &'a str,
    pub epsilon: f64,
    pub verdict: &'a str,
    pub wall_time: Option<f64>,
    pub branches: usize,
    pub depth: usize,
    pub bounding: &'a str,
    pub propagation: &'a str,
    pub timed_out: bool,
    pub counterexample_t: Option<f64>,
    pub violation: Option<String>,
}

impl VerifyRow {
    pub fn new(row: &Row, v: &Verdict, omit_timing: bool, branch_log: bool) -> Self {
        let q = &row.query;
        let log = branch_log.then(|| {
            let mut log = v.log.clone();
            if omit_timing {
                for r in &mut log {
                    r.propagation_secs = 0.0;
                    r.bounding_secs = 0.0;
                }
            }
            log
        });
        Self {
            image: row.image.clone(),
            perturbation: perturbation_label(q.perturbation()),
            epsilon: q.perturbation().epsilon,
            verdict: v.status.to_string(),
            wall_time: (!omit_timing).then_some(v.wall_time),
            branches: v.branches_explored,
            depth: v.max_depth_reached,
            bounding: q.options().bounding.to_string(),
            propagation: q.options().propagation.to_string(),
            timed_out: v.timed_out,
            counterexample: v.counterexample.as_ref().map(|c| CounterexampleSummary {
                t: c.t,
                violation: c.violation.clone(),
            }),
            branch_log: log,
        }
    }

    pub fn flat(&self) -> FlatVerifyRow<'_> {
        FlatVerifyRow {
            image: &self.image,
            perturbation: &self.perturbation,
            epsilon: self.epsilon,
            verdict: &self.verdict,
            wall_time: self.wall_time,
            branches: self.branches,
            depth: self.depth,
            bounding: &self.bounding,
            propagation: &self.propagation,
            timed_out: self.timed_out,
            counterexample_t: self.counterexample.as_ref().map(|c| c.t),
            violation: self.counterexample.as_ref().map(|c| c.violation.to_string()),
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} {} eps={} -> {} ({} branches, depth {})",
            self.image, self.perturbation, self.epsilon, self.verdict, self.branches, self.depth
        );
        if let Some(c) = &self.counterexample {
            s.push_str(&format!("; counterexample at t={}: {}", c.t, c.violation));
        }
        if self.timed_out {
            s.push_str("; timed out");
        }
        s
    }
}

#[derive(Serialize)]
pub struct FalsifyRow {
    pub image: String,
    pub perturbation: String,
    pub epsilon: f64,
    pub found: bool,
    pub t: Option<f64>,
    pub violation: Option<Violation>,
    pub counterexample_image: Option<Image>,
}

#[derive(Serialize)]
pub struct FlatFalsifyRow<'a> {
    pub image: &'a str,
    pub perturbation: &'a str,
    pub epsilon: f64,
    pub found: bool,
    pub t: Option<f64>,
    pub violation: Option<String>,
}

impl FalsifyRow {
    pub fn new(row: &Row, cex: Option<&Counterexample>) -> Self {
        let q = &row.query;
        Self {
            image: row.image.clone(),
            perturbation: perturbation_label(q.perturbation()),
            epsilon: q.perturbation().epsilon,
            found: cex.is_some(),
            t: cex.map(|c| c.t),
            violation: cex.map(|c| c.violation.clone()),
            counterexample_image: cex.map(|c| c.image.clone()),
        }
    }

    pub fn flat(&self) -> FlatFalsifyRow<'_> {
        FlatFalsifyRow {
            image: &self.image,
            perturbation: &self.perturbation,
            epsilon: self.epsilon,
            found: self.found,
            t: self.t,
            violation: self.violation.as_ref().map(|v| v.to_string()),
        }
    }

    pub fn summary(&self) -> String {
        match (&self.t, &self.violation) {
            (Some(t), Some(v)) => format!(
                "{} {} eps={} -> counterexample at t={t}: {v}",
                self.image, self.perturbation, self.epsilon
            ),
            _ => format!("{} {} eps={} -> no counterexample", self.image, self.perturbation, self.epsilon),
        }
    }
}

#[derive(Clone, Serialize)]
pub struct TightnessRow {
    pub range_lo: f64,
    pub range_hi: f64,
    pub count: usize,
    pub mean_improvement_pct: f64,
    pub mean_baseline_width: f64,
    pub mean_optimal_width: f64,
}

#[derive(Serialize)]
pub struct TightnessOutput {
    pub instances: usize,
    pub min_width: f64,
    pub max_width: f64,
    pub dominance_violations: usize,
    pub rows: Vec<TightnessRow>,
}

impl TightnessOutput {
    pub fn new(rep: &TightnessReport) -> Self {
        Self {
            instances: rep.instances,
            min_width: rep.half_width.0,
            max_width: rep.half_width.1,
            dominance_violations: rep.dominance_violations,
            rows: rep
                .buckets
                .iter()
                .map(|b| TightnessRow {
                    range_lo: b.range.0,
                    range_hi: b.range.1,
                    count: b.count,
                    mean_improvement_pct: b.mean_improvement_pct,
                    mean_baseline_width: b.mean_baseline_width,
                    mean_optimal_width: b.mean_optimal_width,
                })
                .collect(),
        }
    }
}
