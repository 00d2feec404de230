//! Per-model slice statistics, post-processing, error-slice ranking and
//! cross-model overlap.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumerate::{SliceLattice, SliceRef};
use crate::index::{sample_order_digest, NamedKey};
use crate::schema::TaggedDataset;

pub const REPORT_FORMAT_VERSION: &str = "1";
const REPORT_KIND: &str = "error-slice-report";

/// Threshold comparisons allow this much floating-point slack so that a
/// slice sitting exactly on `overall - C` is not lost to rounding.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("lattice covers {lattice} samples but the performance column has {performance}")]
    DimensionMismatch { lattice: usize, performance: usize },
    #[error("sample order differs from the one the lattice was built on")]
    SampleOrderMismatch,
    #[error("sample `{id}` has no performance value")]
    MissingPerformance { id: String },
    #[error("performance of sample `{id}` is {value}, expected a value in [0, 1]")]
    PerformanceOutOfRange { id: String, value: f64 },
    #[error("threshold C must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("overlap fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("reports were computed on different lattices ({a} vs {b})")]
    LatticeMismatch { a: String, b: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One model's per-sample performance, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct PerformanceColumn {
    ids: Vec<String>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct PerfLine {
    id: String,
    performance: Option<f64>,
}

impl PerformanceColumn {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self, AnalyzeError> {
        if ids.len() != values.len() {
            return Err(AnalyzeError::DimensionMismatch {
                lattice: ids.len(),
                performance: values.len(),
            });
        }
        for (id, &v) in ids.iter().zip(&values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(AnalyzeError::PerformanceOutOfRange {
                    id: id.clone(),
                    value: v,
                });
            }
        }
        Ok(Self { ids, values })
    }

    pub fn from_dataset(dataset: &TaggedDataset) -> Result<Self, AnalyzeError> {
        let mut ids = Vec::with_capacity(dataset.len());
        let mut values = Vec::with_capacity(dataset.len());
        for s in dataset.samples() {
            let v = s
                .performance
                .ok_or_else(|| AnalyzeError::MissingPerformance { id: s.id.clone() })?;
            ids.push(s.id.clone());
            values.push(v);
        }
        Self::new(ids, values)
    }

    /// Reads NDJSON lines carrying at least `id` and `performance`. Full
    /// dataset lines are accepted; their tags are ignored. A leading
    /// header line without an `id` is skipped.
    pub fn read_ndjson(source: impl BufRead) -> Result<Self, AnalyzeError> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| AnalyzeError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if ids.is_empty() && value.get("id").is_none() {
                continue;
            }
            let parsed: PerfLine = serde_json::from_value(value).map_err(|e| AnalyzeError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            let v = parsed
                .performance
                .ok_or(AnalyzeError::MissingPerformance { id: parsed.id.clone() })?;
            ids.push(parsed.id);
            values.push(v);
        }
        Self::new(ids, values)
    }

    pub fn write_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        for (id, v) in self.ids.iter().zip(&self.values) {
            serde_json::to_writer(&mut out, &serde_json::json!({"id": id, "performance": v}))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn digest(&self) -> String {
        sample_order_digest(self.ids.iter().map(String::as_str))
    }
}

/// Which parent average a child is compared against when post-processing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentRule {
    /// Removed when its average exceeds the lowest parent average.
    #[default]
    Min,
    /// Removed only when better than every parent.
    Max,
}

impl FromStr for ParentRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min" => Ok(ParentRule::Min),
            "max" => Ok(ParentRule::Max),
            other => Err(format!("unknown parent rule `{other}` (expected min or max)")),
        }
    }
}

impl std::fmt::Display for ParentRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParentRule::Min => "min",
            ParentRule::Max => "max",
        })
    }
}

/// A model's averages over a shared lattice.
#[derive(Clone, Debug)]
pub struct ModelSliceView {
    lattice: Arc<SliceLattice>,
    model_id: String,
    avg: Vec<Vec<f64>>,
    overall: f64,
    retained: Vec<Vec<bool>>,
    rule: Option<ParentRule>,
}

/// Attaches per-sample performance to every slice of the lattice. The
/// column must list the same ids in the same order as the dataset the
/// lattice was built from.
pub fn attach_model(
    lattice: Arc<SliceLattice>,
    model_id: impl Into<String>,
    perf: &PerformanceColumn,
) -> Result<ModelSliceView, AnalyzeError> {
    if perf.len() != lattice.num_samples() {
        return Err(AnalyzeError::DimensionMismatch {
            lattice: lattice.num_samples(),
            performance: perf.len(),
        });
    }
    if perf.digest() != lattice.sample_digest() {
        return Err(AnalyzeError::SampleOrderMismatch);
    }
    let values = perf.values();
    let overall = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let avg: Vec<Vec<f64>> = lattice
        .layers()
        .iter()
        .map(|layer| {
            layer
                .par_iter()
                .map(|node| {
                    let sum: f64 = node.members.iter().map(|i| values[i as usize]).sum();
                    sum / node.count() as f64
                })
                .collect()
        })
        .collect();
    let retained = avg.iter().map(|l| vec![true; l.len()]).collect();
    Ok(ModelSliceView {
        lattice,
        model_id: model_id.into(),
        avg,
        overall,
        retained,
        rule: None,
    })
}

/// Shorthand for [`attach_model`] with the dataset's own performance column.
pub fn attach_dataset(
    lattice: Arc<SliceLattice>,
    model_id: impl Into<String>,
    dataset: &TaggedDataset,
) -> Result<ModelSliceView, AnalyzeError> {
    if dataset.len() != lattice.num_samples() {
        return Err(AnalyzeError::DimensionMismatch {
            lattice: lattice.num_samples(),
            performance: dataset.len(),
        });
    }
    attach_model(lattice, model_id, &PerformanceColumn::from_dataset(dataset)?)
}

impl ModelSliceView {
    pub fn lattice(&self) -> &Arc<SliceLattice> {
        &self.lattice
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn overall_perf(&self) -> f64 {
        self.overall
    }

    pub fn avg_perf(&self, r: SliceRef) -> f64 {
        self.avg[r.depth as usize - 1][r.index as usize]
    }

    pub fn retained(&self, r: SliceRef) -> bool {
        self.retained[r.depth as usize - 1][r.index as usize]
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().flatten().filter(|&&r| r).count()
    }

    /// The rule applied by [`ModelSliceView::postprocess`], if any.
    pub fn rule(&self) -> Option<ParentRule> {
        self.rule
    }

    /// Marks deeper slices that do better than their parents as
    /// uninformative. Depth-1 slices are always kept; every slice is judged
    /// against its own lattice parents whether or not those were kept.
    pub fn postprocess(mut self, rule: ParentRule) -> Self {
        for d in 1..self.avg.len() {
            let (before, current) = self.avg.split_at(d);
            let parents = &before[d - 1];
            for (i, node) in self.lattice.layers()[d].iter().enumerate() {
                let mut bound = match rule {
                    ParentRule::Min => f64::INFINITY,
                    ParentRule::Max => f64::NEG_INFINITY,
                };
                for &p in &node.parents {
                    let v = parents[p as usize];
                    bound = match rule {
                        ParentRule::Min => bound.min(v),
                        ParentRule::Max => bound.max(v),
                    };
                }
                self.retained[d][i] = current[0][i] <= bound;
            }
        }
        self.rule = Some(rule);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSlice {
    pub key: NamedKey,
    pub count: usize,
    pub avg_perf: f64,
    pub parents: Vec<NamedKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSliceReport {
    pub version: String,
    pub kind: String,
    pub model_id: String,
    pub threshold: f64,
    pub overall_perf: f64,
    pub rule: Option<ParentRule>,
    /// Fingerprint of the lattice the report was computed on.
    pub lattice_id: String,
    pub num_samples: usize,
    pub retained_count: usize,
    pub error_slices: Vec<ErrorSlice>,
}

/// Total order used for reports: lower average first, then larger slices,
/// then the lexicographic key.
pub fn report_order(a: &ErrorSlice, b: &ErrorSlice) -> Ordering {
    a.avg_perf
        .total_cmp(&b.avg_perf)
        .then(b.count.cmp(&a.count))
        .then_with(|| a.key.cmp(&b.key))
}

/// Lists retained slices whose average is at most `overall - c`, at every
/// depth, in report order.
pub fn identify_error_slices(view: &ModelSliceView, c: f64) -> Result<ErrorSliceReport, AnalyzeError> {
    if !(c > 0.0 && c < 1.0) {
        return Err(AnalyzeError::InvalidThreshold(c));
    }
    let lattice = &view.lattice;
    let limit = view.overall - c + THRESHOLD_SLACK;
    let mut slices: Vec<ErrorSlice> = lattice
        .refs()
        .filter(|&r| view.retained(r) && view.avg_perf(r) <= limit)
        .map(|r| ErrorSlice {
            key: lattice.named(r),
            count: lattice.node(r).count(),
            avg_perf: view.avg_perf(r),
            parents: lattice.parents(r).map(|p| lattice.named(p)).collect(),
        })
        .collect();
    slices.sort_by(report_order);
    Ok(ErrorSliceReport {
        version: REPORT_FORMAT_VERSION.into(),
        kind: REPORT_KIND.into(),
        model_id: view.model_id.clone(),
        threshold: c,
        overall_perf: view.overall,
        rule: view.rule,
        lattice_id: lattice.fingerprint().to_string(),
        num_samples: lattice.num_samples(),
        retained_count: view.retained_count(),
        error_slices: slices,
    })
}

impl ErrorSliceReport {
    pub fn len(&self) -> usize {
        self.error_slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.error_slices.is_empty()
    }

    /// The first `ceil(fraction * len)` error slices.
    pub fn top_fraction(&self, fraction: f64) -> &[ErrorSlice] {
        let n = (fraction * self.error_slices.len() as f64).ceil() as usize;
        &self.error_slices[..n.min(self.error_slices.len())]
    }

    pub fn contains(&self, key: &NamedKey) -> bool {
        self.error_slices.iter().any(|s| &s.key == key)
    }

    pub fn write_json(&self, out: impl Write) -> Result<(), AnalyzeError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn read_json(input: impl Read) -> Result<Self, AnalyzeError> {
        let report: ErrorSliceReport = serde_json::from_reader(input)?;
        if report.version != REPORT_FORMAT_VERSION || report.kind != REPORT_KIND {
            return Err(AnalyzeError::Malformed {
                line: 1,
                message: format!("unsupported report `{}` version `{}`", report.kind, report.version),
            });
        }
        Ok(report)
    }
}

/// Share of `a`'s top slices that also appear among `b`'s top slices.
/// Both sides take the same fraction of their own error-slice list.
pub fn slice_overlap(a: &ErrorSliceReport, b: &ErrorSliceReport, fraction: f64) -> Result<f64, AnalyzeError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AnalyzeError::InvalidFraction(fraction));
    }
    if a.lattice_id != b.lattice_id {
        return Err(AnalyzeError::LatticeMismatch {
            a: a.lattice_id.clone(),
            b: b.lattice_id.clone(),
        });
    }
    let top_a = a.top_fraction(fraction);
    let top_b: HashSet<&NamedKey> = b.top_fraction(fraction).iter().map(|s| &s.key).collect();
    if top_a.is_empty() {
        return Ok(if top_b.is_empty() { 1.0 } else { 0.0 });
    }
    let shared = top_a.iter().filter(|s| top_b.contains(&s.key)).count();
    Ok(shared as f64 / top_a.len() as f64)
}

/// Mean of both overlap directions.
pub fn symmetric_overlap(a: &ErrorSliceReport, b: &ErrorSliceReport, fraction: f64) -> Result<f64, AnalyzeError> {
    Ok((slice_overlap(a, b, fraction)? + slice_overlap(b, a, fraction)?) / 2.0)
}

/// Pairwise overlap matrix, row model against column model.
pub fn overlap_matrix(reports: &[ErrorSliceReport], fraction: f64) -> Result<Vec<Vec<f64>>, AnalyzeError> {
    reports
        .iter()
        .map(|a| reports.iter().map(|b| slice_overlap(a, b, fraction)).collect())
        .collect()
}
