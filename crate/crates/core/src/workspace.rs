//! On-disk workspace: a manifest naming the schema, dataset, lattice and
//! per-model artifacts, plus the persisted mark basket.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analyze::{attach_model, AnalyzeError, ErrorSliceReport, ModelSliceView, PerformanceColumn};
use crate::enumerate::{LatticeError, SliceLattice};
use crate::index::NamedKey;
use crate::schema::{load_dataset, load_schema, AttributeSchema, DatasetError, SchemaError, TaggedDataset};

pub const MANIFEST_FILE: &str = "workspace.json";
pub const MARKS_FILE: &str = "marks.log";
const MANIFEST_KIND: &str = "workspace";

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("model `{model}`: {source}")]
    Model { model: String, source: AnalyzeError },
    #[error("{0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub performance: PathBuf,
    pub report: PathBuf,
}

/// `workspace.json`. Paths are relative to the workspace root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub kind: String,
    pub schema: PathBuf,
    pub dataset: PathBuf,
    pub lattice: PathBuf,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    /// Candidate data for repair selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
}

impl Manifest {
    pub fn new(schema: impl Into<PathBuf>, dataset: impl Into<PathBuf>, lattice: impl Into<PathBuf>) -> Self {
        Self {
            version: "1".into(),
            kind: MANIFEST_KIND.into(),
            schema: schema.into(),
            dataset: dataset.into(),
            lattice: lattice.into(),
            models: Vec::new(),
            pool: None,
        }
    }

    pub fn with_model(
        mut self,
        id: impl Into<String>,
        performance: impl Into<PathBuf>,
        report: impl Into<PathBuf>,
    ) -> Self {
        self.models.push(ModelEntry {
            id: id.into(),
            performance: performance.into(),
            report: report.into(),
        });
        self
    }

    pub fn with_pool(mut self, pool: impl Into<PathBuf>) -> Self {
        self.pool = Some(pool.into());
        self
    }

    pub fn write(&self, root: &Path) -> Result<(), WorkspaceError> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn read(root: &Path) -> Result<Self, WorkspaceError> {
        let path = root.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(io_err(&path))?;
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| WorkspaceError::Invalid {
                path: path.clone(),
                message: e.to_string(),
            })?;
        if manifest.kind != MANIFEST_KIND || manifest.version != "1" {
            return Err(WorkspaceError::Invalid {
                path,
                message: format!("unsupported `{}` version `{}`", manifest.kind, manifest.version),
            });
        }
        Ok(manifest)
    }
}

pub struct LoadedModel {
    pub id: String,
    pub view: ModelSliceView,
    pub report: ErrorSliceReport,
    pub report_path: PathBuf,
}

/// All artifacts of a workspace, loaded and cross-checked.
pub struct Workspace {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub schema: Arc<AttributeSchema>,
    pub dataset: Arc<TaggedDataset>,
    pub lattice: Arc<SliceLattice>,
    pub models: Vec<LoadedModel>,
}

fn open(root: &Path, rel: &Path) -> Result<(PathBuf, BufReader<File>), WorkspaceError> {
    let path = root.join(rel);
    let file = File::open(&path).map_err(io_err(&path))?;
    Ok((path, BufReader::new(file)))
}

impl Workspace {
    pub fn load(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        let manifest = Manifest::read(&root)?;
        let schema = Arc::new(load_schema(open(&root, &manifest.schema)?.1)?);
        let dataset = Arc::new(load_dataset(schema.clone(), open(&root, &manifest.dataset)?.1)?);
        let lattice = Arc::new(SliceLattice::read_json(open(&root, &manifest.lattice)?.1)?);
        let digest = crate::index::sample_order_digest(dataset.ids());
        if lattice.num_samples() != dataset.len() || lattice.sample_digest() != digest {
            return Err(WorkspaceError::Mismatch(format!(
                "lattice covers {} samples that do not match the {} dataset samples",
                lattice.num_samples(),
                dataset.len()
            )));
        }
        let mut models: Vec<LoadedModel> = Vec::new();
        for entry in &manifest.models {
            if models.iter().any(|m| m.id == entry.id) {
                return Err(WorkspaceError::Mismatch(format!("model `{}` listed twice", entry.id)));
            }
            let model_err = |source| WorkspaceError::Model {
                model: entry.id.clone(),
                source,
            };
            let perf = PerformanceColumn::read_ndjson(open(&root, &entry.performance)?.1).map_err(model_err)?;
            let (report_path, reader) = open(&root, &entry.report)?;
            let report = ErrorSliceReport::read_json(reader).map_err(model_err)?;
            if report.lattice_id != lattice.fingerprint() {
                return Err(WorkspaceError::Mismatch(format!(
                    "report for `{}` was computed on a different lattice",
                    entry.id
                )));
            }
            if report.model_id != entry.id {
                return Err(WorkspaceError::Mismatch(format!(
                    "report at {} belongs to `{}`, not `{}`",
                    report_path.display(),
                    report.model_id,
                    entry.id
                )));
            }
            let mut view = attach_model(lattice.clone(), &entry.id, &perf).map_err(model_err)?;
            if let Some(rule) = report.rule {
                view = view.postprocess(rule);
            }
            models.push(LoadedModel {
                id: entry.id.clone(),
                view,
                report,
                report_path,
            });
        }
        Ok(Self {
            root,
            manifest,
            schema,
            dataset,
            lattice,
            models,
        })
    }

    pub fn model(&self, id: &str) -> Option<&LoadedModel> {
        self.models.iter().find(|m| m.id == id)
    }

    /// True when some loaded report lists `key` as an error slice.
    pub fn in_some_report(&self, key: &NamedKey) -> bool {
        self.models.iter().any(|m| m.report.contains(key))
    }

    pub fn pool_path(&self) -> Option<PathBuf> {
        self.manifest.pool.as_ref().map(|p| self.root.join(p))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum MarkOp {
    Add { key: String },
    Remove { key: String },
}

/// Slice keys flagged for repair in marking order, persisted as an
/// append-only log that is compacted on open and whenever stale entries
/// outnumber live ones.
pub struct MarkBasket {
    path: PathBuf,
    keys: Vec<NamedKey>,
    log_entries: usize,
}

impl MarkBasket {
    /// Replays the log at `path`. An unterminated last line (an interrupted
    /// append) is dropped.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let path = path.into();
        let mut keys: Vec<NamedKey> = Vec::new();
        match File::open(&path) {
            Ok(file) => {
                let lines: Vec<String> = BufReader::new(file)
                    .lines()
                    .collect::<Result<_, _>>()
                    .map_err(io_err(&path))?;
                let last = lines.len();
                for (i, line) in lines.iter().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let op = match serde_json::from_str::<MarkOp>(line) {
                        Ok(op) => op,
                        Err(_) if i + 1 == last => {
                            log::warn!("{}: dropping truncated last entry", path.display());
                            break;
                        }
                        Err(e) => {
                            return Err(WorkspaceError::Invalid {
                                path,
                                message: format!("line {}: {e}", i + 1),
                            })
                        }
                    };
                    let (MarkOp::Add { key: text } | MarkOp::Remove { key: text }) = &op;
                    let key: NamedKey =
                        text.parse()
                            .map_err(|e: crate::index::KeyParseError| WorkspaceError::Invalid {
                                path: path.clone(),
                                message: format!("line {}: {e}", i + 1),
                            })?;
                    keys.retain(|k| *k != key);
                    if let MarkOp::Add { .. } = op {
                        keys.push(key);
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
        let mut basket = Self {
            path,
            keys,
            log_entries: 0,
        };
        basket.compact()?;
        Ok(basket)
    }

    pub fn keys(&self) -> &[NamedKey] {
        &self.keys
    }

    pub fn contains(&self, key: &NamedKey) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Returns false when the key was already marked.
    pub fn add(&mut self, key: NamedKey) -> Result<bool, WorkspaceError> {
        if self.keys.contains(&key) {
            return Ok(false);
        }
        self.append(&MarkOp::Add { key: key.to_string() })?;
        self.keys.push(key);
        Ok(true)
    }

    /// Returns false when the key was not marked.
    pub fn remove(&mut self, key: &NamedKey) -> Result<bool, WorkspaceError> {
        if !self.keys.contains(key) {
            return Ok(false);
        }
        self.append(&MarkOp::Remove { key: key.to_string() })?;
        self.keys.retain(|k| k != key);
        if self.log_entries > 2 * self.keys.len() + 16 {
            self.compact()?;
        }
        Ok(true)
    }

    fn append(&mut self, op: &MarkOp) -> Result<(), WorkspaceError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let line = serde_json::to_string(op).expect("mark serializes") + "\n";
        file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        file.sync_data().map_err(io_err(&self.path))?;
        self.log_entries += 1;
        Ok(())
    }

    /// Rewrites the log as one `add` per live key.
    pub fn compact(&mut self) -> Result<(), WorkspaceError> {
        let tmp = self.path.with_extension("log.tmp");
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut out = BufWriter::new(file);
            for key in &self.keys {
                let line = serde_json::to_string(&MarkOp::Add { key: key.to_string() }).expect("mark serializes");
                writeln!(out, "{line}").map_err(io_err(&tmp))?;
            }
            let file = out.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        self.log_entries = self.keys.len();
        Ok(())
    }
}


/// One model's artifacts for [`create_workspace`].
pub struct NewModel<'a> {
    pub id: &'a str,
    pub performance: &'a PerformanceColumn,
    pub report: &'a ErrorSliceReport,
}

/// Writes artifacts under `root` with a manifest naming them. The mark log
/// is left untouched.
pub fn create_workspace(
    root: &Path,
    dataset: &TaggedDataset,
    lattice: &SliceLattice,
    models: &[NewModel<'_>],
    pool: Option<&TaggedDataset>,
) -> Result<Manifest, WorkspaceError> {
    let write = |rel: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<(), String>| -> Result<(), WorkspaceError> {
        let path = root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        f(&mut out).map_err(|message| WorkspaceError::Invalid {
            path: path.clone(),
            message,
        })?;
        out.flush().map_err(io_err(&path))
    };
    let s = |e: &dyn std::fmt::Display| e.to_string();
    write("schema.json", &|o| {
        o.write_all(dataset.schema().to_json_pretty().as_bytes())
            .map_err(|e| s(&e))
    })?;
    write("dataset.ndjson", &|o| dataset.write_ndjson(o).map_err(|e| s(&e)))?;
    write("lattice.json", &|o| lattice.write_json(o).map_err(|e| s(&e)))?;
    let mut manifest = Manifest::new("schema.json", "dataset.ndjson", "lattice.json");
    for m in models {
        let perf = format!("models/{}.perf.ndjson", m.id);
        let report = format!("models/{}.report.json", m.id);
        write(&perf, &|o| m.performance.write_ndjson(o).map_err(|e| s(&e)))?;
        write(&report, &|o| m.report.write_json(o).map_err(|e| s(&e)))?;
        manifest = manifest.with_model(m.id, perf, report);
    }
    if let Some(pool) = pool {
        write("pool.ndjson", &|o| pool.write_ndjson(o).map_err(|e| s(&e)))?;
        manifest = manifest.with_pool("pool.ndjson");
    }
    manifest.write(root)?;
    Ok(manifest)
}
