//! Predicting error slices that the validation data does not cover, and
//! measuring models on them once data is available.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analyze::ErrorSliceReport;
use crate::generate::form;
use crate::index::{build_index, NamedKey};
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompts::{self, Prompt};
use crate::schema::{AttributeSchema, TaggedDataset, Task};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("the error-slice report is empty")]
    EmptyReport,
    #[error("attribute `{0}` is not in the schema")]
    UnknownAttribute(String),
    #[error("no embedding for `{0}`")]
    NoEmbedding(String),
    #[error("embedding of `{text}` has dimension {got}, expected {expected}")]
    Dimension { text: String, got: usize, expected: usize },
    #[error("pair count must be between 1 and the number of attributes ({max}), got {got}")]
    InvalidPairCount { got: usize, max: usize },
    #[error("classification predictions need a confusion class")]
    MissingConfusionClass,
    #[error("no valid combination after {attempts} attempts ({dropped} dropped)")]
    NoValidPredictions { attempts: usize, dropped: usize },
    #[error("dataset has no performance for sample `{0}`")]
    MissingPerformance(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, PredictError>;
}

/// Fixed text-to-vector table, e.g. precomputed text-encoder embeddings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(entries: impl IntoIterator<Item = (impl Into<String>, Vec<f64>)>) -> Result<Self, PredictError> {
        let table: HashMap<String, Vec<f64>> = entries.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut dims = table.iter().map(|(k, v)| (k, v.len()));
        if let Some((_, d)) = dims.next() {
            if let Some((k, got)) = dims.find(|(_, n)| *n != d) {
                return Err(PredictError::Dimension {
                    text: k.clone(),
                    got,
                    expected: d,
                });
            }
        }
        Ok(Self { table })
    }

    pub fn from_json(text: &str) -> Result<Self, PredictError> {
        let table: HashMap<String, Vec<f64>> = serde_json::from_str(text)?;
        Self::new(table)
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn dim(&self) -> usize {
        self.table.values().next().map_or(0, Vec::len)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, PredictError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| PredictError::NoEmbedding(text.to_string()))
    }
}

/// Deterministic pseudo-embedding from a hash of the text. Carries no
/// meaning; useful as an offline stand-in.
#[derive(Clone, Copy, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, PredictError> {
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while out.len() < self.dim {
            let digest = Sha256::new()
                .chain_update(block.to_le_bytes())
                .chain_update(text)
                .finalize();
            for chunk in digest.chunks(4) {
                if out.len() == self.dim {
                    break;
                }
                let v = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                out.push(v as f64 / u32::MAX as f64 * 2.0 - 1.0);
            }
            block += 1;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric `{other}` (expected euclidean or cosine)")),
        }
    }
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Provenance {
    TagSubstitution {
        origin: NamedKey,
        attribute: String,
        replaced: String,
        with: String,
    },
    Instruction {
        model: String,
        prompt: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedSlice {
    pub key: NamedKey,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstituteOptions {
    /// Error slices, from the top of the report, that seed substitution.
    pub top_k: usize,
    pub metric: Metric,
}

impl Default for SubstituteOptions {
    fn default() -> Self {
        Self {
            top_k: 20,
            metric: Metric::Euclidean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub origin: NamedKey,
    pub attribute: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub predicted: Vec<PredictedSlice>,
    pub skipped: Vec<SkippedPair>,
}

/// Distances closer than this count as equal; the tie goes to the
/// lexicographically smaller tag.
const TIE_EPSILON: f64 = 1e-12;

struct EmbeddingCache<'a> {
    provider: &'a dyn EmbeddingProvider,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl EmbeddingCache<'_> {
    fn get(&self, text: &str) -> Result<Vec<f64>, PredictError> {
        if let Some(v) = self.cache.lock().unwrap().get(text) {
            return Ok(v.clone());
        }
        let v = self.provider.embed(text)?;
        let dim = self.provider.dim();
        if v.len() != dim {
            return Err(PredictError::Dimension {
                text: text.to_string(),
                got: v.len(),
                expected: dim,
            });
        }
        self.cache.lock().unwrap().insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// For each of the top error slices and each of its pairs, swaps the tag
/// for the nearest other tag of the same attribute. Results that repeat an
/// earlier prediction or a slice already in the report are dropped.
pub fn substitute_tags(
    report: &ErrorSliceReport,
    schema: &AttributeSchema,
    provider: &dyn EmbeddingProvider,
    opts: &SubstituteOptions,
) -> Result<Substitution, PredictError> {
    if report.is_empty() {
        return Err(PredictError::EmptyReport);
    }
    let known: BTreeSet<&NamedKey> = report.error_slices.iter().map(|s| &s.key).collect();
    let mut emitted = BTreeSet::new();
    let cache = EmbeddingCache {
        provider,
        cache: Mutex::default(),
    };
    let mut out = Substitution::default();
    for slice in report.error_slices.iter().take(opts.top_k) {
        for (attr_name, tag) in slice.key.pairs() {
            let attr = schema
                .attribute(attr_name)
                .ok_or_else(|| PredictError::UnknownAttribute(attr_name.clone()))?;
            let mut others: Vec<&String> = attr.tags.iter().filter(|t| *t != tag).collect();
            if others.is_empty() {
                out.skipped.push(SkippedPair {
                    origin: slice.key.clone(),
                    attribute: attr_name.clone(),
                    reason: "attribute has no other tag".into(),
                });
                continue;
            }
            others.sort();
            let here = cache.get(tag)?;
            let mut dists = Vec::with_capacity(others.len());
            for t in &others {
                dists.push(opts.metric.distance(&here, &cache.get(t)?));
            }
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let pick = others
                .iter()
                .zip(&dists)
                .find(|(_, &d)| d <= best + TIE_EPSILON)
                .map(|(t, _)| (*t).clone())
                .expect("at least one candidate");
            let key = NamedKey::new(
                slice
                    .key
                    .pairs()
                    .iter()
                    .map(|(a, t)| (a.clone(), if a == attr_name { pick.clone() } else { t.clone() })),
            );
            if known.contains(&key) || !emitted.insert(key.clone()) {
                continue;
            }
            out.predicted.push(PredictedSlice {
                key,
                provenance: Provenance::TagSubstitution {
                    origin: slice.key.clone(),
                    attribute: attr_name.clone(),
                    replaced: tag.clone(),
                    with: pick,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct InstructOptions {
    pub task: Task,
    pub pair_count: usize,
    pub main_class: String,
    pub confusion_class: Option<String>,
    /// Extra requests after a reply with no usable combination.
    pub retries: usize,
    /// Recorded in provenance.
    pub model_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedCombination {
    pub combination: Value,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Instructed {
    pub predicted: Vec<PredictedSlice>,
    pub dropped: Vec<DroppedCombination>,
    pub attempts: usize,
}

fn instruct_prompt(opts: &InstructOptions) -> Result<Prompt, PredictError> {
    match opts.task {
        Task::Classification if opts.confusion_class.is_none() => Err(PredictError::MissingConfusionClass),
        Task::Classification => Ok(prompts::PREDICT_CONFUSION),
        _ => Ok(prompts::PREDICT_LOCALIZATION),
    }
}

/// Asks the model for attribute-tag combinations likely to fail, keeping
/// those that use the schema's vocabulary with exactly `pair_count`
/// distinct attributes.
pub fn instruct_predict(
    schema: &AttributeSchema,
    client: &dyn LlmClient,
    opts: &InstructOptions,
) -> Result<Instructed, PredictError> {
    if opts.pair_count == 0 || opts.pair_count > schema.len() {
        return Err(PredictError::InvalidPairCount {
            got: opts.pair_count,
            max: schema.len(),
        });
    }
    let prompt = instruct_prompt(opts)?;
    let mut payload = json!({
        "main object class": opts.main_class,
        "form": form::schema_tag_form(schema),
        "pairs": opts.pair_count,
    });
    if let Some(target) = &opts.confusion_class {
        payload["target class"] = Value::String(target.clone());
    }
    let base = payload.to_string();
    let mut user = base.clone();
    let mut result = Instructed::default();
    for _ in 0..=opts.retries {
        result.attempts += 1;
        let reply = client.complete(&LlmRequest::new(prompt.text, user.clone()))?;
        let mut emitted = BTreeSet::new();
        let note = match predictions(&reply) {
            Err(e) => e,
            Ok(items) => {
                for item in items {
                    match check_combination(schema, &item, opts.pair_count) {
                        Ok(key) if emitted.insert(key.clone()) => result.predicted.push(PredictedSlice {
                            key,
                            provenance: Provenance::Instruction {
                                model: opts.model_id.clone(),
                                prompt: prompt.id(),
                            },
                        }),
                        Ok(_) => drop_combination(&mut result, item, "duplicate combination".into()),
                        Err(reason) => drop_combination(&mut result, item, reason),
                    }
                }
                if !result.predicted.is_empty() {
                    return Ok(result);
                }
                "no combination satisfied the rules".to_string()
            }
        };
        user = format!("{base}\n\nYour previous reply could not be used: {note}. Reply with the form only.");
    }
    Err(PredictError::NoValidPredictions {
        attempts: result.attempts,
        dropped: result.dropped.len(),
    })
}

fn drop_combination(result: &mut Instructed, combination: Value, reason: String) {
    log::warn!("dropping predicted combination {combination}: {reason}");
    result.dropped.push(DroppedCombination { combination, reason });
}

fn predictions(reply: &str) -> Result<Vec<Value>, String> {
    let mut map = form::strict_object(reply)?;
    match map.remove("predictions") {
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err("`predictions` must be a list".into()),
        None => Err("missing key `predictions`".into()),
    }
}

fn check_combination(schema: &AttributeSchema, item: &Value, pair_count: usize) -> Result<NamedKey, String> {
    let map = item.as_object().ok_or("combination is not an object")?;
    let pairs = form::parse_pairs_object(map)?;
    let mut seen = BTreeSet::new();
    for (_, attr, tag) in &pairs {
        let a = schema
            .attribute(attr)
            .ok_or_else(|| format!("unknown attribute `{attr}`"))?;
        if !a.has_tag(tag) {
            return Err(format!("tag `{tag}` is not in the vocabulary of `{attr}`"));
        }
        if !seen.insert(attr.as_str()) {
            return Err(format!("attribute `{attr}` has more than one tag"));
        }
    }
    if pairs.len() != pair_count {
        return Err(format!(
            "total number of attribute-tag pairs must be equal to the given integer ({} != {pair_count})",
            pairs.len()
        ));
    }
    Ok(NamedKey::new(pairs.into_iter().map(|(_, a, t)| (a, t))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Evaluated,
    TooSmall,
    Unmatched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub key: NamedKey,
    pub provenance: Provenance,
    pub status: EvalStatus,
    pub count: usize,
    pub avg_perf: Option<f64>,
    pub degradation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationTable {
    pub overall_perf: f64,
    pub min_count: usize,
    pub rows: Vec<DegradationRow>,
    /// Mean degradation over evaluated rows.
    pub mean_degradation: Option<f64>,
}

/// Measures each predicted slice on a dataset carrying model performance.
pub fn evaluate_predicted(
    predicted: &[PredictedSlice],
    dataset: &TaggedDataset,
    min_count: usize,
) -> Result<DegradationTable, PredictError> {
    let perf: Vec<f64> = dataset
        .samples()
        .iter()
        .map(|s| {
            s.performance
                .ok_or_else(|| PredictError::MissingPerformance(s.id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let overall = if perf.is_empty() {
        0.0
    } else {
        perf.iter().sum::<f64>() / perf.len() as f64
    };
    let index = build_index(dataset);
    let vocab = index.vocabulary();
    let mut rows = Vec::with_capacity(predicted.len());
    for p in predicted {
        let members = vocab.resolve(&p.key).map(|key| {
            key.iter()
                .skip(1)
                .fold(index.members(key[0]), |acc, &pair| acc.intersect(&index.members(pair)))
        });
        let count = members.as_ref().map_or(0, |m| m.count());
        let (status, avg) = if count == 0 {
            (EvalStatus::Unmatched, None)
        } else if count < min_count {
            (EvalStatus::TooSmall, None)
        } else {
            let m = members.expect("matched");
            let sum: f64 = m.iter().map(|i| perf[i as usize]).sum();
            (EvalStatus::Evaluated, Some(sum / count as f64))
        };
        rows.push(DegradationRow {
            key: p.key.clone(),
            provenance: p.provenance.clone(),
            status,
            count,
            avg_perf: avg,
            degradation: avg.map(|a| a - overall),
        });
    }
    let evaluated: Vec<f64> = rows.iter().filter_map(|r| r.degradation).collect();
    let mean = (!evaluated.is_empty()).then(|| evaluated.iter().sum::<f64>() / evaluated.len() as f64);
    Ok(DegradationTable {
        overall_perf: overall,
        min_count,
        rows,
        mean_degradation: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder { dim: 12 };
        assert_eq!(e.embed("red").unwrap(), e.embed("red").unwrap());
        assert_ne!(e.embed("red").unwrap(), e.embed("blue").unwrap());
        assert_eq!(e.embed("x").unwrap().len(), 12);
        assert!(e.embed("x").unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn metrics() {
        assert_eq!(Metric::Euclidean.distance(&[0.0, 3.0], &[4.0, 0.0]), 5.0);
        assert!(Metric::Cosine.distance(&[1.0, 0.0], &[2.0, 0.0]).abs() < 1e-12);
        assert!((Metric::Cosine.distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_dimension_checked() {
        assert!(TableEmbedder::new([("a", vec![1.0]), ("b", vec![1.0, 2.0])]).is_err());
        let t = TableEmbedder::from_json(r#"{"a": [1, 2]}"#).unwrap();
        assert_eq!(t.dim(), 2);
        assert!(matches!(t.embed("z"), Err(PredictError::NoEmbedding(_))));
    }
}
