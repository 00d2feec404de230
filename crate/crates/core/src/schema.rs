//! Attribute/tag universe and tagged datasets.
//!
//! The schema document is a JSON object keyed by category (`"main object"`,
//! `"background"`, `"global"`), each mapping attribute name to its tag list,
//! plus `"version"` and `"task"`. Datasets are newline-delimited JSON records
//! `{id, tags, performance?, group?}` preceded by an optional
//! `{"version": ...}` header line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

pub const DATASET_FORMAT_VERSION: &str = "1";
pub const NOT_VISIBLE: &str = "not visible";
pub const BINARY_PREFIX: &str = "is ";

/// Trim surrounding whitespace and apply Unicode NFC. All attribute and tag
/// comparisons happen on canonical strings.
pub fn canonical(s: &str) -> String {
    s.trim().nfc().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MainObject,
    Background,
    Global,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::MainObject, Category::Background, Category::Global];

    /// Key used for this category in schema and prompt documents.
    pub fn form_key(self) -> &'static str {
        match self {
            Category::MainObject => "main object",
            Category::Background => "background",
            Category::Global => "global",
        }
    }

    pub fn from_form_key(key: &str) -> Option<Category> {
        match canonical(key).as_str() {
            "main object" => Some(Category::MainObject),
            "background" => Some(Category::Background),
            "global" => Some(Category::Global),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.form_key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    PoseEstimation,
    ObjectDetection,
    #[default]
    Other,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "classification" => Ok(Task::Classification),
            "pose" | "pose_estimation" => Ok(Task::PoseEstimation),
            "detection" | "object_detection" => Ok(Task::ObjectDetection),
            "other" => Ok(Task::Other),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub category: Category,
    pub tags: Vec<String>,
}

impl Attribute {
    pub fn new(name: &str, category: Category, tags: &[&str]) -> Self {
        Self {
            name: canonical(name),
            category,
            tags: tags.iter().map(|t| canonical(t)).collect(),
        }
    }

    /// Binary attributes are named `is …` and tagged yes/no.
    pub fn binary(&self) -> bool {
        is_binary_name(&self.name)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

pub fn is_binary_name(name: &str) -> bool {
    name.starts_with(BINARY_PREFIX)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Malformed(String),
    #[error("attribute name is empty")]
    EmptyName,
    #[error("duplicate attribute name `{0}`")]
    DuplicateAttribute(String),
    #[error("attribute `{0}` needs at least 2 tags")]
    TooFewTags(String),
    #[error("attribute `{attribute}` lists tag `{tag}` more than once")]
    DuplicateTag { attribute: String, tag: String },
    #[error("attribute `{0}` has an empty tag")]
    EmptyTag(String),
    #[error("binary attribute with non-binary tags: `{0}`")]
    NonBinaryTags(String),
}

impl SchemaError {
    /// Attribute the error refers to, if any.
    pub fn attribute(&self) -> Option<&str> {
        match self {
            SchemaError::DuplicateAttribute(a)
            | SchemaError::TooFewTags(a)
            | SchemaError::EmptyTag(a)
            | SchemaError::NonBinaryTags(a)
            | SchemaError::DuplicateTag { attribute: a, .. } => Some(a),
            SchemaError::Malformed(_) | SchemaError::EmptyName => None,
        }
    }
}

/// Checks the per-attribute invariants on an already canonical attribute.
pub fn check_attribute(attr: &Attribute) -> Result<(), SchemaError> {
    if attr.name.is_empty() {
        return Err(SchemaError::EmptyName);
    }
    let mut seen = HashSet::new();
    for tag in &attr.tags {
        if tag.is_empty() {
            return Err(SchemaError::EmptyTag(attr.name.clone()));
        }
        if !seen.insert(tag.as_str()) {
            return Err(SchemaError::DuplicateTag {
                attribute: attr.name.clone(),
                tag: tag.clone(),
            });
        }
    }
    if attr.tags.len() < 2 {
        return Err(SchemaError::TooFewTags(attr.name.clone()));
    }
    if attr.binary() {
        let allowed = |t: &String| t == "yes" || t == "no" || t == NOT_VISIBLE;
        if !attr.tags.iter().all(allowed) || !attr.has_tag("yes") || !attr.has_tag("no") {
            return Err(SchemaError::NonBinaryTags(attr.name.clone()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    task: Task,
    version: String,
}

impl AttributeSchema {
    pub fn new(task: Task, version: impl Into<String>, attributes: Vec<Attribute>) -> Result<Self, SchemaError> {
        let attributes: Vec<Attribute> = attributes
            .into_iter()
            .map(|a| Attribute {
                name: canonical(&a.name),
                category: a.category,
                tags: a.tags.iter().map(|t| canonical(t)).collect(),
            })
            .collect();
        let mut names = HashSet::new();
        for attr in &attributes {
            check_attribute(attr)?;
            if !names.insert(attr.name.as_str()) {
                return Err(SchemaError::DuplicateAttribute(attr.name.clone()));
            }
        }
        Ok(Self {
            attributes,
            task,
            version: version.into(),
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn by_category(&self, category: Category) -> impl Iterator<Item = &Attribute> {
        self.attributes.iter().filter(move |a| a.category == category)
    }

    /// Serializes to the schema document form (category-keyed, order kept).
    pub fn to_document(&self) -> Value {
        let mut doc = serde_json::Map::new();
        doc.insert("version".into(), Value::String(self.version.clone()));
        doc.insert("task".into(), serde_json::to_value(self.task).expect("task serializes"));
        for category in Category::ALL {
            let mut attrs = serde_json::Map::new();
            for attr in self.by_category(category) {
                attrs.insert(attr.name.clone(), Value::from(attr.tags.clone()));
            }
            doc.insert(category.form_key().into(), Value::Object(attrs));
        }
        Value::Object(doc)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("schema serializes")
    }
}

/// JSON object read as ordered entries so repeated keys are visible.
struct Entries<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for Entries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<V>(std::marker::PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = Entries<V>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries<V>, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        deserializer.deserialize_map(EntriesVisitor(std::marker::PhantomData))
    }
}

fn entries_of(raw: &RawValue, what: &str) -> Result<Vec<(String, Value)>, SchemaError> {
    serde_json::from_str::<Entries<Value>>(raw.get())
        .map(|e| e.0)
        .map_err(|e| SchemaError::Malformed(format!("{what}: {e}")))
}

fn parse_category_entries(category: Category, entries: Vec<(String, Value)>) -> Result<Vec<Attribute>, SchemaError> {
    let mut out = Vec::with_capacity(entries.len());
    for (name, tags) in entries {
        let tags = match tags {
            Value::Array(items) => items
                .into_iter()
                .map(|t| match t {
                    Value::String(s) => Ok(canonical(&s)),
                    other => Err(SchemaError::Malformed(format!(
                        "tag of attribute `{name}` must be a string, got {other}"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?,
            other => {
                return Err(SchemaError::Malformed(format!(
                    "tags of attribute `{name}` must be a list, got {other}"
                )))
            }
        };
        out.push(Attribute {
            name: canonical(&name),
            category,
            tags,
        });
    }
    Ok(out)
}

/// Parses and validates a schema document.
pub fn load_schema(source: impl std::io::Read) -> Result<AttributeSchema, SchemaError> {
    let top: Entries<Box<RawValue>> =
        serde_json::from_reader(source).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    let mut version = None;
    let mut task = Task::Other;
    let mut by_category: BTreeMap<Category, Vec<Attribute>> = BTreeMap::new();
    for (key, value) in top.0 {
        match key.as_str() {
            "version" => {
                let value: Value =
                    serde_json::from_str(value.get()).map_err(|e| SchemaError::Malformed(e.to_string()))?;
                version = Some(match value {
                    Value::String(s) => s,
                    Value::Number(n) => n.to_string(),
                    other => return Err(SchemaError::Malformed(format!("version must be a string, got {other}"))),
                })
            }
            "task" => {
                task = serde_json::from_str(value.get()).map_err(|e| SchemaError::Malformed(format!("task: {e}")))?;
            }
            other => {
                let category = Category::from_form_key(other)
                    .ok_or_else(|| SchemaError::Malformed(format!("unknown top-level key `{other}`")))?;
                if by_category.contains_key(&category) {
                    return Err(SchemaError::Malformed(format!("category `{other}` appears twice")));
                }
                let entries = entries_of(&value, other)?;
                by_category.insert(category, parse_category_entries(category, entries)?);
            }
        }
    }
    let version = version.ok_or_else(|| SchemaError::Malformed("missing `version`".into()))?;
    let attributes = Category::ALL
        .iter()
        .flat_map(|c| by_category.remove(c).unwrap_or_default())
        .collect();
    AttributeSchema::new(task, version, attributes)
}

pub fn load_schema_str(text: &str) -> Result<AttributeSchema, SchemaError> {
    load_schema(text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentIssue {
    MissingAttribute { attribute: String },
    UnknownAttribute { attribute: String },
    OutOfVocabulary { attribute: String, tag: String },
}

impl fmt::Display for AssignmentIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignmentIssue::MissingAttribute { attribute } => write!(f, "missing attribute `{attribute}`"),
            AssignmentIssue::UnknownAttribute { attribute } => write!(f, "unknown attribute `{attribute}`"),
            AssignmentIssue::OutOfVocabulary { attribute, tag } => {
                write!(f, "tag `{tag}` is not in the vocabulary of `{attribute}`")
            }
        }
    }
}

/// Every problem with one sample's tag assignment. Empty means admissible.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<AssignmentIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_assignment<'a, I>(schema: &AttributeSchema, tags: I) -> ValidationReport
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (attr, tag) in tags {
        let attr = canonical(attr);
        let tag = canonical(tag);
        match schema.attribute(&attr) {
            None => issues.push(AssignmentIssue::UnknownAttribute {
                attribute: attr.clone(),
            }),
            Some(a) if !a.has_tag(&tag) => issues.push(AssignmentIssue::OutOfVocabulary {
                attribute: attr.clone(),
                tag,
            }),
            Some(_) => {}
        }
        seen.insert(attr);
    }
    for a in schema.attributes() {
        if !seen.contains(&a.name) {
            issues.push(AssignmentIssue::MissingAttribute {
                attribute: a.name.clone(),
            });
        }
    }
    ValidationReport { issues }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, tags: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>)>) -> Self {
        Self {
            id: id.into(),
            tags: tags
                .into_iter()
                .map(|(a, t)| (canonical(a.as_ref()), canonical(t.as_ref())))
                .collect(),
            performance: None,
            group: None,
        }
    }

    pub fn with_performance(mut self, perf: f64) -> Self {
        self.performance = Some(perf);
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn tag(&self, attribute: &str) -> Option<&str> {
        self.tags.get(attribute).map(String::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record `{id}`: {report}")]
    InvalidAssignment {
        line: usize,
        id: String,
        report: ValidationReport,
    },
    #[error("line {line}: record `{id}`: performance out of range: {value}")]
    PerformanceOutOfRange { line: usize, id: String, value: f64 },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Samples validated against a schema. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedDataset {
    schema: Arc<AttributeSchema>,
    samples: Vec<Sample>,
}

impl TaggedDataset {
    /// Validates every sample; `line` numbers in errors are 1-based record
    /// positions.
    pub fn new(schema: Arc<AttributeSchema>, samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::with_capacity(samples.len());
        let mut out = Vec::with_capacity(samples.len());
        for (i, sample) in samples.into_iter().enumerate() {
            out.push(check_sample(&schema, sample, i + 1, &mut ids)?);
        }
        Ok(Self { schema, samples: out })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// `None` if any sample lacks a performance value.
    pub fn performance(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.performance).collect()
    }

    pub fn write_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", serde_json::json!({ "version": DATASET_FORMAT_VERSION }))?;
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

fn check_sample(
    schema: &AttributeSchema,
    mut sample: Sample,
    line: usize,
    ids: &mut HashSet<String>,
) -> Result<Sample, DatasetError> {
    sample.tags = sample.tags.iter().map(|(a, t)| (canonical(a), canonical(t))).collect();
    let report = validate_assignment(schema, &sample.tags);
    if !report.is_empty() {
        return Err(DatasetError::InvalidAssignment {
            line,
            id: sample.id,
            report,
        });
    }
    if let Some(p) = sample.performance {
        if !(0.0..=1.0).contains(&p) {
            return Err(DatasetError::PerformanceOutOfRange {
                line,
                id: sample.id,
                value: p,
            });
        }
    }
    if !ids.insert(sample.id.clone()) {
        return Err(DatasetError::DuplicateId { line, id: sample.id });
    }
    Ok(sample)
}

fn is_header(value: &Value) -> bool {
    value
        .as_object()
        .is_some_and(|o| o.contains_key("version") && !o.contains_key("id"))
}

/// Reads a newline-delimited dataset. Blank lines are skipped.
pub fn load_dataset(schema: Arc<AttributeSchema>, source: impl BufRead) -> Result<TaggedDataset, DatasetError> {
    let mut ids = HashSet::new();
    let mut samples = Vec::new();
    let mut first = true;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if first && is_header(&value) {
            let version = &value["version"];
            if version.as_str() != Some(DATASET_FORMAT_VERSION) {
                return Err(DatasetError::Malformed {
                    line: line_no,
                    message: format!("unsupported dataset version {version}"),
                });
            }
            first = false;
            continue;
        }
        first = false;
        let sample: Sample = serde_json::from_value(value).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(check_sample(&schema, sample, line_no, &mut ids)?);
    }
    Ok(TaggedDataset { schema, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_schema() -> AttributeSchema {
        load_schema_str(
            r#"{"version": "pose-1", "task": "pose_estimation",
                "main object": {"is arm crossing": ["yes", "no"],
                                "pose": ["sitting", "jumping", "lying down", "standing"]},
                "background": {"background color": ["red", "blue", "not visible"]},
                "global": {"brightness": ["high", "medium", "low"]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn loads_pose_attributes() {
        let schema = pose_schema();
        assert_eq!(schema.len(), 4);
        assert_eq!(schema.task(), Task::PoseEstimation);
        let arm = schema.attribute("is arm crossing").unwrap();
        assert!(arm.binary());
        assert_eq!(arm.category, Category::MainObject);
        assert_eq!(schema.attribute("pose").unwrap().tags.len(), 4);
        assert_eq!(load_schema_str(&schema.to_json_pretty()).unwrap(), schema);
    }

    #[test]
    fn single_tag_rejected() {
        let err = load_schema_str(r#"{"version": "1", "global": {"contrast": ["high"]}}"#).unwrap_err();
        assert_eq!(err, SchemaError::TooFewTags("contrast".into()));
        assert!(err.to_string().contains("needs at least 2 tags"));
    }

    #[test]
    fn binary_with_extra_tag_rejected() {
        let err =
            load_schema_str(r#"{"version": "1", "main object": {"is sitting": ["yes", "no", "maybe"]}}"#).unwrap_err();
        assert_eq!(err, SchemaError::NonBinaryTags("is sitting".into()));
        assert!(err.to_string().contains("binary attribute with non-binary tags"));
        let ok =
            load_schema_str(r#"{"version": "1", "background": {"is sky presented": ["yes", "no", "not visible"]}}"#);
        assert!(ok.is_ok());
    }

    #[test]
    fn duplicates_rejected() {
        let err =
            load_schema_str(r#"{"version": "1", "main object": {"size": ["a", "b"]}, "global": {"size": ["c", "d"]}}"#)
                .unwrap_err();
        assert_eq!(err, SchemaError::DuplicateAttribute("size".into()));
        let err =
            load_schema_str(r#"{"version": "1", "global": {"size": ["a", "b"], "size": ["c", "d"]}}"#).unwrap_err();
        assert_eq!(err.attribute(), Some("size"));
        let err = load_schema_str(r#"{"version": "1", "global": {"size": ["a", "a "]}}"#).unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateTag { .. }));
        assert!(matches!(
            load_schema_str(r#"{"version": "1", "global": {"size": []}}"#),
            Err(SchemaError::TooFewTags(_))
        ));
    }

    #[test]
    fn normalization_is_nfc_and_trim() {
        // "e" + combining acute vs precomposed
        let schema =
            load_schema_str("{\"version\": \"1\", \"global\": {\" tone \": [\"cafe\u{301}\", \"plain\"]}}").unwrap();
        let a = schema.attribute("tone").unwrap();
        assert!(a.has_tag("caf\u{e9}"));
        assert!(!a.has_tag("Plain"));
    }

    fn full(schema: &AttributeSchema) -> BTreeMap<String, String> {
        schema
            .attributes()
            .iter()
            .map(|a| (a.name.clone(), a.tags[0].clone()))
            .collect()
    }

    #[test]
    fn validation_report_contents() {
        let schema = pose_schema();
        let tags = full(&schema);
        assert!(validate_assignment(&schema, &tags).is_empty());

        let mut missing = tags.clone();
        missing.remove("background color");
        let report = validate_assignment(&schema, &missing);
        assert_eq!(
            report.issues,
            vec![AssignmentIssue::MissingAttribute {
                attribute: "background color".into()
            }]
        );

        let mut oov = tags.clone();
        oov.insert("brightness".into(), "purple-ish".into());
        oov.insert("mood".into(), "calm".into());
        let report = validate_assignment(&schema, &oov);
        assert_eq!(report.issues.len(), 2);
        assert!(report.issues.contains(&AssignmentIssue::OutOfVocabulary {
            attribute: "brightness".into(),
            tag: "purple-ish".into()
        }));
    }

    fn record(id: &str, perf: f64) -> String {
        format!(
            r#"{{"id":"{id}","tags":{{"is arm crossing":"no","pose":"sitting","background color":"red","brightness":"low"}},"performance":{perf}}}"#
        )
    }

    #[test]
    fn dataset_load_and_errors() {
        let schema = Arc::new(pose_schema());
        let text = [record("a", 1.0), record("b", 0.0), record("c", 0.25)].join("\n");
        let ds = load_dataset(schema.clone(), text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);

        let bad = [record("a", 1.0), record("b", 1.3)].join("\n");
        let err = load_dataset(schema.clone(), bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("performance out of range"), "{err}");
        assert!(err.to_string().contains("`b`"));

        let dup = [record("img_7", 1.0), record("img_7", 0.5)].join("\n");
        let err = load_dataset(schema.clone(), dup.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateId { ref id, line: 2 } if id == "img_7"));
        assert!(err.to_string().contains("duplicate id"));

        let oov = r#"{"id":"x","tags":{"is arm crossing":"maybe","pose":"sitting","background color":"red","brightness":"low"}}"#;
        assert!(matches!(
            load_dataset(schema, oov.as_bytes()),
            Err(DatasetError::InvalidAssignment { .. })
        ));
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let schema = Arc::new(pose_schema());
        let text = [record("a", 0.1 + 0.2), record("b", 1.0 / 3.0)].join("\n");
        let ds = load_dataset(schema.clone(), text.as_bytes()).unwrap();
        let again = load_dataset(schema, ds.to_ndjson().as_bytes()).unwrap();
        assert_eq!(ds, again);
        assert_eq!(again.samples()[0].performance, Some(0.1 + 0.2));
    }
}
