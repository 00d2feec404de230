use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::index::hex;
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompts;
use crate::schema::{validate_assignment, AttributeSchema, DatasetError, Sample, TaggedDataset};

use super::form;

const CHECKPOINT_KIND: &str = "assign-checkpoint";

#[derive(Clone, Debug)]
pub struct AssignOptions {
    pub main_class: String,
    pub parallelism: usize,
    /// Requests per image before it is quarantined.
    pub attempts: usize,
    /// NDJSON file of finished images; existing entries are skipped.
    pub checkpoint: Option<PathBuf>,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            main_class: String::new(),
            parallelism: 1,
            attempts: 2,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug)]
pub struct AssignOutcome {
    /// Tagged images in input order, quarantined ones left out.
    pub dataset: TaggedDataset,
    pub quarantine: Vec<QuarantineEntry>,
    /// Requests sent in this run.
    pub requests: u64,
    /// Images taken from the checkpoint instead of asked again.
    pub resumed: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum AssignError {
    #[error("tagging interrupted after {completed} of {total} images: {source}")]
    Interrupted {
        completed: usize,
        total: usize,
        #[source]
        source: LlmError,
    },
    #[error("image `{0}` is listed twice")]
    DuplicateImage(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Record {
    Tagged { id: String, tags: BTreeMap<String, String> },
    Quarantined { id: String, quarantined: Vec<String> },
}

impl Record {
    fn id(&self) -> &str {
        match self {
            Record::Tagged { id, .. } | Record::Quarantined { id, .. } => id,
        }
    }
}

fn schema_digest(schema: &AttributeSchema) -> String {
    hex(&Sha256::digest(schema.to_document().to_string().as_bytes()))
}

struct Shared {
    results: Vec<Option<Record>>,
    checkpoint: Option<File>,
    error: Option<LlmError>,
}

/// Tags every image independently, up to `parallelism` requests at a time.
/// Images whose replies still fail validation after `attempts` requests are
/// quarantined. A transport failure stops new requests; everything finished
/// so far is in the checkpoint, and calling again with the same checkpoint
/// resumes where the run stopped.
pub fn assign_tags(
    schema: &Arc<AttributeSchema>,
    client: &dyn LlmClient,
    images: &[String],
    opts: &AssignOptions,
) -> Result<AssignOutcome, AssignError> {
    let mut positions = HashMap::with_capacity(images.len());
    for (i, id) in images.iter().enumerate() {
        if positions.insert(id.as_str(), i).is_some() {
            return Err(AssignError::DuplicateImage(id.clone()));
        }
    }
    let digest = schema_digest(schema);
    let mut results: Vec<Option<Record>> = vec![None; images.len()];
    let mut resumed = 0;
    let mut checkpoint = None;
    if let Some(path) = &opts.checkpoint {
        if path.exists() {
            for record in read_checkpoint(path, &digest)? {
                let i = *positions
                    .get(record.id())
                    .ok_or_else(|| AssignError::Checkpoint(format!("unknown image `{}`", record.id())))?;
                if results[i].is_none() {
                    resumed += 1;
                }
                results[i] = Some(record);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            writeln!(
                file,
                "{}",
                json!({"version": "1", "kind": CHECKPOINT_KIND, "schema": digest})
            )?;
        }
        checkpoint = Some(file);
    }

    let todo: Vec<usize> = (0..images.len()).filter(|&i| results[i].is_none()).collect();
    let shared = Mutex::new(Shared {
        results,
        checkpoint,
        error: None,
    });
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let requests = AtomicU64::new(0);
    let payload = json!({
        "main object class": opts.main_class,
        "form": form::schema_tag_form(schema),
    })
    .to_string();

    let worker = || {
        while !stop.load(Ordering::SeqCst) {
            let n = next.fetch_add(1, Ordering::SeqCst);
            let Some(&i) = todo.get(n) else { break };
            let id = &images[i];
            let outcome = tag_one(schema, client, id, &payload, opts.attempts.max(1), &requests);
            let mut guard = shared.lock().unwrap();
            match outcome {
                Ok(record) => {
                    if let Some(file) = guard.checkpoint.as_mut() {
                        let line = serde_json::to_string(&record).expect("record serializes");
                        if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                            guard
                                .error
                                .get_or_insert(LlmError::Transport(format!("writing checkpoint: {e}")));
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                    guard.results[i] = Some(record);
                }
                Err(e) => {
                    guard.error.get_or_insert(e);
                    stop.store(true, Ordering::SeqCst);
                }
            }
        }
    };
    let threads = opts.parallelism.max(1).min(todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(worker);
        }
    });

    let shared = shared.into_inner().unwrap();
    if let Some(source) = shared.error {
        return Err(AssignError::Interrupted {
            completed: shared.results.iter().filter(|r| r.is_some()).count(),
            total: images.len(),
            source,
        });
    }
    let mut samples = Vec::new();
    let mut quarantine = Vec::new();
    for record in shared.results.into_iter().flatten() {
        match record {
            Record::Tagged { id, tags } => samples.push(Sample::new(id, tags)),
            Record::Quarantined { id, quarantined } => quarantine.push(QuarantineEntry {
                id,
                reasons: quarantined,
            }),
        }
    }
    Ok(AssignOutcome {
        dataset: TaggedDataset::new(schema.clone(), samples)?,
        quarantine,
        requests: requests.into_inner(),
        resumed,
    })
}

fn tag_one(
    schema: &AttributeSchema,
    client: &dyn LlmClient,
    id: &str,
    payload: &str,
    attempts: usize,
    requests: &AtomicU64,
) -> Result<Record, LlmError> {
    let mut reasons = Vec::new();
    let mut user = payload.to_string();
    for _ in 0..attempts {
        let request = LlmRequest::new(prompts::ASSIGN_TAGS.text, user.clone()).with_images([id]);
        requests.fetch_add(1, Ordering::Relaxed);
        let reply = match client.complete(&request) {
            Ok(r) => r,
            Err(LlmError::Envelope(e)) => {
                reasons.push(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        match check_reply(schema, &reply) {
            Ok(tags) => {
                return Ok(Record::Tagged {
                    id: id.to_string(),
                    tags,
                })
            }
            Err(e) => {
                user =
                    format!("{payload}\n\nYour previous reply could not be used: {e}. Reply with the JSON form only.");
                reasons.push(e);
            }
        }
    }
    Ok(Record::Quarantined {
        id: id.to_string(),
        quarantined: reasons,
    })
}

fn check_reply(schema: &AttributeSchema, reply: &str) -> Result<BTreeMap<String, String>, String> {
    let map = form::strict_object(reply)?;
    let mut tags = BTreeMap::new();
    for (_, name, tag) in form::parse_pairs_object(&map)? {
        if tags.insert(name.clone(), tag).is_some() {
            return Err(format!("attribute `{name}` answered twice"));
        }
    }
    let report = validate_assignment(schema, tags.iter());
    if !report.is_empty() {
        let issues: Vec<String> = report.issues.iter().map(ToString::to_string).collect();
        return Err(issues.join("; "));
    }
    Ok(tags)
}

fn read_checkpoint(path: &PathBuf, digest: &str) -> Result<Vec<Record>, AssignError> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let last = n + 1 == lines.len();
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            // a write cut short by a crash
            Err(_) if last => break,
            Err(e) => return Err(AssignError::Checkpoint(format!("line {}: {e}", n + 1))),
        };
        if n == 0 {
            if value["kind"] != CHECKPOINT_KIND {
                return Err(AssignError::Checkpoint("not a tagging checkpoint".into()));
            }
            if value["schema"] != digest {
                return Err(AssignError::Checkpoint("written for a different schema".into()));
            }
            continue;
        }
        let record: Record =
            serde_json::from_value(value).map_err(|e| AssignError::Checkpoint(format!("line {}: {e}", n + 1)))?;
        if !seen.insert(record.id().to_string()) {
            return Err(AssignError::Checkpoint(format!(
                "image `{}` recorded twice",
                record.id()
            )));
        }
        records.push(record);
    }
    Ok(records)
}
