//! Attribute and tag vocabulary generation driven by a language model.
//!
//! Stages run in order on a [`GenerationSession`]: attribute proposals
//! (comparative and task specific), tag lists, tag refinement from sample
//! images, then [`assign_tags`] over the whole dataset. Every exchange is
//! appended to the session's audit log, which replays through
//! [`crate::llm::ReplayClient`].

pub mod assign;
pub mod form;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::llm::{LlmClient, LlmError, LlmRequest, Transcript, TranscriptEntry};
use crate::prompts::{self, Prompt};
use crate::schema::{
    canonical, is_binary_name, Attribute, AttributeSchema, Category, SchemaError, Task, BINARY_PREFIX, NOT_VISIBLE,
};

pub use assign::{assign_tags, AssignError, AssignOptions, AssignOutcome, QuarantineEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Comparative image pairs requested per class.
    pub pairs_per_class: usize,
    /// Images reviewed when refining tags.
    pub review_subset: usize,
    /// Extra attempts after an unusable reply.
    pub retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            pairs_per_class: 20,
            review_subset: 100,
            retries: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Comparative,
    TaskAttributes,
    ValidateAttributes,
    DetermineTags,
    RefineTags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: Stage,
    pub prompt: String,
    pub request: LlmRequest,
    pub response: Result<String, LlmError>,
}

/// Something the pipeline accepted or dropped that a reviewer should see.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    /// Proposed again under another category; the first placement is kept.
    CategoryConflict {
        attribute: String,
        kept: Category,
        proposed: Category,
    },
    /// The name suggests a different category than the one given.
    SuspectCategory {
        attribute: String,
        category: Category,
        expected: Category,
    },
    /// A binary attribute was given tags other than yes/no.
    ForcedBinaryTags {
        attribute: String,
        proposed: Vec<String>,
    },
    /// The reply named an attribute that is not in the draft.
    UnknownAttribute {
        attribute: String,
        stage: Stage,
    },
    /// A proposed tag could not be added.
    RejectedTag {
        attribute: String,
        tag: String,
        reason: String,
    },
    /// A review image produced no usable reply.
    SkippedImage {
        image: String,
        reason: String,
    },
    RemovedAttribute {
        attribute: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftAttribute {
    pub name: String,
    pub category: Category,
    /// Empty until tags are determined.
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub class: String,
    pub first: String,
    pub second: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{stage:?}: no usable reply after {attempts} attempts: {message}")]
    Unparseable {
        stage: Stage,
        attempts: usize,
        message: String,
    },
    #[error("at least one image pair is required")]
    NoPairs,
    #[error("image pair belongs to class `{0}`, which is not a class of this session")]
    ClassMismatch(String),
    #[error("the session needs a main object class")]
    NoClass,
    #[error("classification queries need at least two classes")]
    NeedTwoClasses,
    #[error("no task-specific attribute query exists for task {0:?}")]
    UnsupportedTask(Task),
    #[error("every attribute already has tags")]
    NothingToTag,
    #[error("attribute `{0}` has no tags yet")]
    MissingTags(String),
    #[error("attribute `{0}` still has fewer than two usable tags")]
    TooFewTags(String),
    #[error("the schema is frozen")]
    Frozen,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

pub struct GenerationSession {
    task: Task,
    classes: Vec<String>,
    draft: Vec<DraftAttribute>,
    audit: Vec<AuditEntry>,
    flags: Vec<Flag>,
    config: GenerationConfig,
    frozen: Option<AttributeSchema>,
}

impl GenerationSession {
    /// `classes` lists the main object classes; localization tasks use one.
    pub fn new(task: Task, classes: impl IntoIterator<Item = impl Into<String>>, config: GenerationConfig) -> Self {
        Self {
            task,
            classes: classes.into_iter().map(|c| canonical(&c.into())).collect(),
            draft: Vec::new(),
            audit: Vec::new(),
            flags: Vec::new(),
            config,
            frozen: None,
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn draft(&self) -> &[DraftAttribute] {
        &self.draft
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }

    pub fn schema(&self) -> Option<&AttributeSchema> {
        self.frozen.as_ref()
    }

    /// The audit log as a replayable transcript.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self
                .audit
                .iter()
                .map(|e| TranscriptEntry {
                    request: e.request.clone(),
                    response: e.response.clone(),
                })
                .collect(),
        }
    }

    fn main_class(&self) -> Result<String, GenerateError> {
        if self.classes.is_empty() {
            return Err(GenerateError::NoClass);
        }
        Ok(self.classes.join(", "))
    }

    fn check_open(&self) -> Result<(), GenerateError> {
        if self.frozen.is_some() {
            return Err(GenerateError::Frozen);
        }
        Ok(())
    }

    fn attribute_form(&self) -> serde_json::Value {
        form::attribute_form(self.draft.iter().map(|a| (a.name.as_str(), a.category)))
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.draft.iter().position(|a| a.name == name)
    }

    fn exchange(
        &mut self,
        client: &dyn LlmClient,
        stage: Stage,
        prompt: Prompt,
        request: LlmRequest,
    ) -> Result<String, GenerateError> {
        let response = client.complete(&request);
        self.audit.push(AuditEntry {
            stage,
            prompt: prompt.id(),
            request,
            response: response.clone(),
        });
        Ok(response?)
    }

    /// Sends `payload` and parses the reply, re-prompting with the parse
    /// error up to the retry limit.
    fn ask<T>(
        &mut self,
        client: &dyn LlmClient,
        stage: Stage,
        prompt: Prompt,
        payload: serde_json::Value,
        images: Vec<String>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, GenerateError> {
        let base = payload.to_string();
        let mut user = base.clone();
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            let request = LlmRequest::new(prompt.text, user.clone()).with_images(images.clone());
            let reply = self.exchange(client, stage, prompt, request)?;
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    user = repair_message(&base, &e);
                    last = e;
                }
            }
        }
        Err(GenerateError::Unparseable {
            stage,
            attempts,
            message: last,
        })
    }

    /// Adds a proposed attribute unless the name is already taken.
    fn merge_attribute(&mut self, category: Category, name: String) -> bool {
        if name.is_empty() {
            return false;
        }
        if let Some(i) = self.find(&name) {
            let kept = self.draft[i].category;
            if kept != category {
                self.flags.push(Flag::CategoryConflict {
                    attribute: name,
                    kept,
                    proposed: category,
                });
            }
            return false;
        }
        if let Some(expected) = expected_category(&name) {
            if expected != category {
                self.flags.push(Flag::SuspectCategory {
                    attribute: name.clone(),
                    category,
                    expected,
                });
            }
        }
        self.draft.push(DraftAttribute {
            name,
            category,
            tags: Vec::new(),
        });
        true
    }

    /// Adds attributes by hand, with the same merge rules as model
    /// proposals. Returns how many were new.
    pub fn seed_attributes<'a>(
        &mut self,
        attrs: impl IntoIterator<Item = (&'a str, Category)>,
    ) -> Result<usize, GenerateError> {
        self.check_open()?;
        Ok(attrs
            .into_iter()
            .filter(|(n, c)| self.merge_attribute(*c, canonical(n)))
            .count())
    }

    /// Asks, for each image pair, for attributes that tell the two images
    /// apart. Returns the number of attributes added.
    pub fn generate_attributes_comparative(
        &mut self,
        client: &dyn LlmClient,
        pairs: &[ImagePair],
    ) -> Result<usize, GenerateError> {
        self.check_open()?;
        if pairs.is_empty() {
            return Err(GenerateError::NoPairs);
        }
        let mut added = 0;
        for pair in pairs {
            let class = canonical(&pair.class);
            if !self.classes.contains(&class) {
                return Err(GenerateError::ClassMismatch(class));
            }
            let payload = json!({
                "main object class": class,
                "form": self.attribute_form(),
            });
            let proposals = self.ask(
                client,
                Stage::Comparative,
                prompts::COMPARATIVE_ATTRIBUTES,
                payload,
                vec![pair.first.clone(), pair.second.clone()],
                form::parse_attribute_form,
            )?;
            for (cat, name) in proposals {
                added += self.merge_attribute(cat, name) as usize;
            }
        }
        Ok(added)
    }

    /// Asks for task-specific error-prone attributes, then runs one review
    /// pass that may only remove attributes. Returns the net change in
    /// draft size.
    pub fn generate_attributes_task(&mut self, client: &dyn LlmClient) -> Result<isize, GenerateError> {
        self.check_open()?;
        let before = self.draft.len() as isize;
        match self.task {
            Task::Classification => {
                if self.classes.len() < 2 {
                    return Err(GenerateError::NeedTwoClasses);
                }
                for i in 0..self.classes.len() {
                    for j in i + 1..self.classes.len() {
                        let payload = json!({
                            "classes": [self.classes[i], self.classes[j]],
                            "form": self.attribute_form(),
                        });
                        self.propose(client, prompts::TASK_ATTRIBUTES_CLASSIFICATION, payload)?;
                    }
                }
            }
            Task::PoseEstimation | Task::ObjectDetection => {
                let payload = json!({
                    "main object class": self.main_class()?,
                    "task": self.task,
                    "form": self.attribute_form(),
                });
                self.propose(client, prompts::TASK_ATTRIBUTES_LOCALIZATION, payload)?;
            }
            Task::Other => return Err(GenerateError::UnsupportedTask(self.task)),
        }

        let payload = json!({
            "main object class": self.main_class()?,
            "form": self.attribute_form(),
        });
        let remove = self.ask(
            client,
            Stage::ValidateAttributes,
            prompts::VALIDATE_ATTRIBUTES,
            payload,
            Vec::new(),
            |t| form::parse_name_list(t, "remove"),
        )?;
        for name in remove {
            match self.find(&name) {
                Some(i) => {
                    self.draft.remove(i);
                    self.flags.push(Flag::RemovedAttribute { attribute: name });
                }
                None => self.flags.push(Flag::UnknownAttribute {
                    attribute: name,
                    stage: Stage::ValidateAttributes,
                }),
            }
        }
        Ok(self.draft.len() as isize - before)
    }

    fn propose(
        &mut self,
        client: &dyn LlmClient,
        prompt: Prompt,
        payload: serde_json::Value,
    ) -> Result<(), GenerateError> {
        let proposals = self.ask(
            client,
            Stage::TaskAttributes,
            prompt,
            payload,
            Vec::new(),
            form::parse_attribute_form,
        )?;
        for (cat, name) in proposals {
            self.merge_attribute(cat, name);
        }
        Ok(())
    }

    /// Fills the tag list of every attribute that has none. Binary
    /// attributes get yes/no, plus "not visible" when the model offers it.
    /// Attributes left with fewer than two tags are asked about again, up
    /// to the retry limit.
    pub fn determine_tags(&mut self, client: &dyn LlmClient) -> Result<(), GenerateError> {
        self.check_open()?;
        let mut pending: Vec<usize> = (0..self.draft.len())
            .filter(|&i| self.draft[i].tags.is_empty())
            .collect();
        if pending.is_empty() {
            return Err(GenerateError::NothingToTag);
        }
        let main = self.main_class()?;
        let attempts = self.config.retries + 1;
        let mut note: Option<String> = None;
        for _ in 0..attempts {
            let form = form::attribute_form(
                pending
                    .iter()
                    .map(|&i| (self.draft[i].name.as_str(), self.draft[i].category)),
            );
            let base = json!({"main object": main, "form": form}).to_string();
            let user = match &note {
                Some(n) => repair_message(&base, n),
                None => base,
            };
            let request = LlmRequest::new(prompts::INITIAL_TAGS.text, user);
            let reply = self.exchange(client, Stage::DetermineTags, prompts::INITIAL_TAGS, request)?;
            let proposals = match form::parse_tag_form(&reply) {
                Ok(p) => p,
                Err(e) => {
                    note = Some(e);
                    continue;
                }
            };
            for (_, name, tags) in proposals {
                match pending.iter().position(|&i| self.draft[i].name == name) {
                    Some(p) => {
                        let i = pending[p];
                        if let Some(tags) = self.usable_tags(&name, tags) {
                            self.draft[i].tags = tags;
                            pending.remove(p);
                        }
                    }
                    None if self.find(&name).is_some() => {}
                    None => self.flags.push(Flag::UnknownAttribute {
                        attribute: name,
                        stage: Stage::DetermineTags,
                    }),
                }
            }
            // binary attributes need nothing from the model
            pending.retain(|&i| {
                if is_binary_name(&self.draft[i].name) {
                    self.draft[i].tags = vec!["yes".into(), "no".into()];
                    false
                } else {
                    true
                }
            });
            if pending.is_empty() {
                return Ok(());
            }
            let names: Vec<&str> = pending.iter().map(|&i| self.draft[i].name.as_str()).collect();
            note = Some(format!(
                "these attributes still need at least two distinct tags: {}",
                names.join(", ")
            ));
        }
        Err(GenerateError::TooFewTags(self.draft[pending[0]].name.clone()))
    }

    fn usable_tags(&mut self, name: &str, proposed: Vec<String>) -> Option<Vec<String>> {
        let mut tags: Vec<String> = Vec::new();
        for t in &proposed {
            if !t.is_empty() && !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        if is_binary_name(name) {
            let mut forced = vec!["yes".to_string(), "no".to_string()];
            if tags.iter().any(|t| t == NOT_VISIBLE) {
                forced.push(NOT_VISIBLE.into());
            }
            if tags.iter().any(|t| !forced.contains(t))
                || !tags.iter().any(|t| t == "yes")
                || !tags.iter().any(|t| t == "no")
            {
                self.flags.push(Flag::ForcedBinaryTags {
                    attribute: name.to_string(),
                    proposed,
                });
            }
            return Some(forced);
        }
        (tags.len() >= 2).then_some(tags)
    }

    /// Shows each review image with the current vocabulary and appends the
    /// tags the model finds missing, then freezes the schema. An empty
    /// subset only freezes.
    pub fn refine_tags_from_data(
        &mut self,
        client: &dyn LlmClient,
        subset: &[String],
    ) -> Result<AttributeSchema, GenerateError> {
        self.check_open()?;
        if let Some(a) = self.draft.iter().find(|a| a.tags.is_empty()) {
            return Err(GenerateError::MissingTags(a.name.clone()));
        }
        let main = self.main_class()?;
        for image in subset.iter().take(self.config.review_subset) {
            let form = form::tag_form(
                self.draft
                    .iter()
                    .map(|a| (a.name.as_str(), a.category, a.tags.as_slice())),
            );
            let payload = json!({"main object class": main, "form": form});
            let additions = match self.ask(
                client,
                Stage::RefineTags,
                prompts::REFINE_TAGS,
                payload,
                vec![image.clone()],
                form::parse_additions,
            ) {
                Ok(a) => a,
                Err(GenerateError::Unparseable { message, .. }) => {
                    self.flags.push(Flag::SkippedImage {
                        image: image.clone(),
                        reason: message,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (name, tags) in additions {
                let Some(i) = self.find(&name) else {
                    self.flags.push(Flag::UnknownAttribute {
                        attribute: name,
                        stage: Stage::RefineTags,
                    });
                    continue;
                };
                for tag in tags {
                    if tag.is_empty() || self.draft[i].tags.contains(&tag) {
                        continue;
                    }
                    if is_binary_name(&name) && tag != NOT_VISIBLE {
                        self.flags.push(Flag::RejectedTag {
                            attribute: name.clone(),
                            tag,
                            reason: "binary attributes take only yes, no and not visible".into(),
                        });
                        continue;
                    }
                    self.draft[i].tags.push(tag);
                }
            }
        }
        self.freeze()
    }

    /// Validates the draft and locks it.
    pub fn freeze(&mut self) -> Result<AttributeSchema, GenerateError> {
        if let Some(s) = &self.frozen {
            return Ok(s.clone());
        }
        // grouped by category, as in the schema document
        let mut ordered: Vec<&DraftAttribute> = self.draft.iter().collect();
        ordered.sort_by_key(|a| a.category);
        let attrs = ordered
            .into_iter()
            .map(|a| Attribute {
                name: a.name.clone(),
                category: a.category,
                tags: a.tags.clone(),
            })
            .collect();
        let schema = AttributeSchema::new(self.task, "1", attrs)?;
        self.frozen = Some(schema.clone());
        Ok(schema)
    }
}

fn repair_message(base: &str, error: &str) -> String {
    format!("{base}\n\nYour previous reply could not be used: {error}. Reply with the JSON form only.")
}

/// Category implied by a name such as "object color" or "background type".
fn expected_category(name: &str) -> Option<Category> {
    let stem = name.strip_prefix(BINARY_PREFIX).unwrap_or(name);
    if stem.starts_with("object ") {
        Some(Category::MainObject)
    } else if stem.starts_with("background ") {
        Some(Category::Background)
    } else {
        None
    }
}
