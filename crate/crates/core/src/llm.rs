//! Text-in, text-out access to a multimodal language model.
//!
//! Pipelines only see [`LlmClient`]. Tests drive them with scripted or
//! replayed clients; [`HttpClient`] talks to an OpenAI-compatible chat
//! completions endpoint.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl LlmRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.images = images.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    /// The service could not be reached or refused the request.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The service answered but the envelope could not be read.
    #[error("unexpected response envelope: {0}")]
    Envelope(String),
    /// A scripted or replayed client has nothing left for this request.
    #[error("no scripted response left for request: {0}")]
    Exhausted(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

impl<C: LlmClient + ?Sized> LlmClient for Arc<C> {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Wraps a closure.
pub struct FnClient<F>(pub F);

impl<F> LlmClient for FnClient<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

/// Answers requests from a fixed queue, in call order, and keeps every
/// request it saw.
#[derive(Default)]
pub struct ScriptedClient {
    responses: Mutex<VecDeque<Result<String, LlmError>>>,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedClient {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(|r| Ok(r.into())).collect()),
            seen: Mutex::default(),
        }
    }

    pub fn push(&self, response: impl Into<String>) {
        self.responses.lock().unwrap().push_back(Ok(response.into()));
    }

    pub fn push_error(&self, err: LlmError) {
        self.responses.lock().unwrap().push_back(Err(err));
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Exhausted(preview(&request.user))))
    }
}

fn preview(text: &str) -> String {
    let mut s: String = text.chars().take(80).collect();
    if s.len() < text.len() {
        s.push_str("...");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: LlmRequest,
    pub response: Result<String, LlmError>,
}

// LlmError crosses the transcript file as a plain message.
impl Serialize for LlmError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LlmError {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let msg = String::deserialize(d)?;
        Ok(match msg.strip_prefix("transport failure: ") {
            Some(rest) => LlmError::Transport(rest.to_string()),
            None => LlmError::Envelope(msg),
        })
    }
}

/// Ordered request/response pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn write_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson(input: impl BufRead) -> Result<Self, serde_json::Error> {
        let mut entries = Vec::new();
        for line in input.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { entries })
    }
}

/// Forwards to an inner client and records every exchange.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<Transcript>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::default(),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.log.lock().unwrap().clone()
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request);
        self.log.lock().unwrap().entries.push(TranscriptEntry {
            request: request.clone(),
            response: response.clone(),
        });
        response
    }
}

/// Answers each request with the recorded response for an identical
/// request. Repeated identical requests are served in recorded order, so
/// replay does not depend on the order concurrent callers arrive in.
pub struct ReplayClient {
    responses: Mutex<HashMap<LlmRequest, VecDeque<Result<String, LlmError>>>>,
}

impl ReplayClient {
    pub fn new(transcript: &Transcript) -> Self {
        let mut responses: HashMap<LlmRequest, VecDeque<_>> = HashMap::new();
        for e in &transcript.entries {
            responses
                .entry(e.request.clone())
                .or_default()
                .push_back(e.response.clone());
        }
        Self {
            responses: Mutex::new(responses),
        }
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.responses
            .lock()
            .unwrap()
            .get_mut(request)
            .and_then(VecDeque::pop_front)
            .unwrap_or_else(|| Err(LlmError::Exhausted(preview(&request.user))))
    }
}

#[derive(Clone, Debug)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
}

impl HttpConfig {
    /// Reads `SLICEWISE_LLM_URL`, `SLICEWISE_LLM_MODEL` and
    /// `SLICEWISE_LLM_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let base_url = std::env::var("SLICEWISE_LLM_URL")
            .map_err(|_| LlmError::Transport("SLICEWISE_LLM_URL is not set".into()))?;
        Ok(Self {
            base_url,
            model: std::env::var("SLICEWISE_LLM_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
            api_key: std::env::var("SLICEWISE_LLM_KEY").ok(),
            timeout: Duration::from_secs(120),
            temperature: 0.0,
        })
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint. Local
/// image paths are inlined as base64 data URLs; `http(s):` and `data:`
/// references are passed through.
pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn image_url(reference: &str) -> Result<String, LlmError> {
        if reference.starts_with("http://") || reference.starts_with("https://") || reference.starts_with("data:") {
            return Ok(reference.to_string());
        }
        let path = Path::new(reference);
        let bytes = std::fs::read(path).map_err(|e| LlmError::Transport(format!("reading image {reference}: {e}")))?;
        let mime = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => "image/png",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "image/jpeg",
        };
        Ok(format!(
            "data:{mime};base64,{}",
            base64::engine::general_purpose::STANDARD.encode(bytes)
        ))
    }

    fn body(&self, request: &LlmRequest) -> Result<serde_json::Value, LlmError> {
        let mut content = vec![serde_json::json!({"type": "text", "text": request.user})];
        for image in &request.images {
            content.push(serde_json::json!({"type": "image_url", "image_url": {"url": Self::image_url(image)?}}));
        }
        Ok(serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
        }))
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(self.body(request)?)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}: {}", preview(&text))));
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LlmError::Envelope(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Envelope(format!("no message content in {}", preview(&text))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_in_order_then_exhausted() {
        let c = ScriptedClient::new(["a", "b"]);
        let r = LlmRequest::new("s", "u");
        assert_eq!(c.complete(&r).unwrap(), "a");
        assert_eq!(c.complete(&r).unwrap(), "b");
        assert!(matches!(c.complete(&r), Err(LlmError::Exhausted(_))));
        assert_eq!(c.requests().len(), 3);
    }

    #[test]
    fn record_then_replay_out_of_order() {
        let rec = RecordingClient::new(FnClient(|r: &LlmRequest| Ok(format!("echo {}", r.user))));
        let a = LlmRequest::new("s", "one");
        let b = LlmRequest::new("s", "two").with_images(["img.png"]);
        rec.complete(&a).unwrap();
        rec.complete(&b).unwrap();
        let transcript = rec.transcript();
        let mut buf = Vec::new();
        transcript.write_ndjson(&mut buf).unwrap();
        let back = Transcript::read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, transcript);
        let replay = ReplayClient::new(&back);
        assert_eq!(replay.complete(&b).unwrap(), "echo two");
        assert_eq!(replay.complete(&a).unwrap(), "echo one");
        assert!(replay.complete(&a).is_err());
    }

    #[test]
    fn transport_error_survives_transcript() {
        let entry = TranscriptEntry {
            request: LlmRequest::new("s", "u"),
            response: Err(LlmError::Transport("down".into())),
        };
        let text = serde_json::to_string(&entry).unwrap();
        let back: TranscriptEntry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, entry);
    }

    #[test]
    fn http_body_inlines_local_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        let client = HttpClient::new(HttpConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key: None,
            timeout: Duration::from_secs(1),
            temperature: 0.0,
        });
        let req = LlmRequest::new("sys", "hi").with_images([path.to_str().unwrap(), "https://h/i.jpg"]);
        let body = client.body(&req).unwrap();
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(
            body["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AQID"
        );
        assert_eq!(body["messages"][1]["content"][2]["image_url"]["url"], "https://h/i.jpg");
        assert!(matches!(
            client.complete(&LlmRequest::new("s", "u")),
            Err(LlmError::Transport(_))
        ));
    }
}
