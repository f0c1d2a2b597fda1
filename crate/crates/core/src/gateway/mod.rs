//! LLM access behind one interface: a live chat-completions backend, a
//! record mode that also persists every response, and a replay mode that
//! serves persisted responses by request hash.

mod http;

pub use http::HttpBackend;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layout::{parse_html_with, Layout, ParseOptions};
use crate::prompt::PromptBundle;

pub const ENV_API_KEY: &str = "LAYOUTCOT_API_KEY";
pub const ENV_ENDPOINT: &str = "LAYOUTCOT_ENDPOINT";
pub const ENV_MODEL: &str = "LAYOUTCOT_MODEL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no stored transcript for key {key} (candidate {candidate})")]
    ReplayMiss { key: String, candidate: u32 },
    #[error("missing credential: {0}")]
    CredentialMissing(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    #[default]
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(GatewayError::Config(format!("unknown mode `{other}` (expected live, record or replay)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: Mode,
    /// Full chat-completions URL.
    pub endpoint: Option<String>,
    pub model: String,
    /// Sampling temperature for coarse candidates.
    pub temperature: f64,
    /// Sampling temperature for refinement stages.
    pub cot_temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub retry_limit: u32,
    pub transcript_dir: Option<PathBuf>,
    /// Concurrent requests per `complete` call.
    pub fanout: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Replay,
            endpoint: None,
            model: "gpt-4".into(),
            temperature: 0.7,
            cot_temperature: 0.0,
            max_tokens: 2048,
            timeout_secs: 120.0,
            retry_limit: 3,
            transcript_dir: None,
            fanout: 4,
        }
    }
}

impl BackendConfig {
    /// Fill endpoint and model from the environment when set there.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            if !v.trim().is_empty() {
                self.endpoint = Some(v);
            }
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            if !v.trim().is_empty() {
                self.model = v;
            }
        }
        self
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.fanout == 0 {
            return Err(GatewayError::Config("fanout must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.cot_temperature.is_finite()) {
            return Err(GatewayError::Config("temperatures must be finite".into()));
        }
        if matches!(self.mode, Mode::Replay | Mode::Record) && self.transcript_dir.is_none() {
            return Err(GatewayError::Config(format!("{:?} mode needs transcript_dir", self.mode).to_lowercase()));
        }
        Ok(())
    }
}

/// One chat request, fully determined by its content and candidate slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub system: String,
    pub user: String,
    pub model: String,
    pub temperature: f64,
    pub candidate: u32,
}

impl Request {
    /// Hex SHA-256 over length-prefixed fields. The temperature enters by its
    /// bit pattern so no float formatting is involved.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        for field in [self.system.as_bytes(), self.user.as_bytes(), self.model.as_bytes()] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field);
        }
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update(u64::from(self.candidate).to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub key: String,
    pub request: Request,
    pub response_text: String,
    pub metadata: TranscriptMeta,
}

impl Transcript {
    pub fn new(request: Request, completion: &Completion) -> Self {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            key: request.key(),
            request,
            response_text: completion.text.clone(),
            metadata: TranscriptMeta {
                created_unix,
                prompt_tokens: completion.prompt_tokens,
                completion_tokens: completion.completion_tokens,
            },
        }
    }
}

fn transcript_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

/// Write-then-rename so readers never see a partial file.
pub fn write_transcript(dir: &Path, t: &Transcript) -> Result<PathBuf, GatewayError> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, t).map_err(|e| GatewayError::Transcript { path: dir.into(), message: e.to_string() })?;
    let path = transcript_path(dir, &t.key);
    tmp.persist(&path).map_err(|e| GatewayError::Io(e.error))?;
    Ok(path)
}

pub fn read_transcript(path: &Path) -> Result<Transcript, GatewayError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Transcript { path: path.into(), message: e.to_string() })
}

/// Anything that answers a single chat request.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &Request) -> Result<Completion, GatewayError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayCheck {
    pub checked: usize,
    /// Files whose stored key, file name, or recomputed key disagree.
    pub mismatched: Vec<PathBuf>,
}

/// Recompute every transcript key under `dir` from its stored request.
pub fn replay_check(dir: &Path) -> Result<ReplayCheck, GatewayError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut report = ReplayCheck::default();
    for p in paths {
        let t = read_transcript(&p)?;
        report.checked += 1;
        let key = t.request.key();
        if key != t.key || p.file_stem().and_then(|s| s.to_str()) != Some(key.as_str()) {
            report.mismatched.push(p);
        }
    }
    Ok(report)
}

pub struct Gateway {
    config: BackendConfig,
    backend: Option<Box<dyn Backend>>,
    /// Serializes transcript writes from concurrent workers.
    write_lock: Mutex<()>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).field("backend", &self.backend.is_some()).finish()
    }
}

impl Gateway {
    /// Build from config. Live and record modes read the API key from
    /// `LAYOUTCOT_API_KEY`.
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.check()?;
        let backend: Option<Box<dyn Backend>> = match config.mode {
            Mode::Replay => None,
            Mode::Live | Mode::Record => {
                let key = std::env::var(ENV_API_KEY)
                    .ok()
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| GatewayError::CredentialMissing(format!("{ENV_API_KEY} is not set")))?;
                let endpoint = config
                    .endpoint
                    .clone()
                    .ok_or_else(|| GatewayError::Config(format!("live access needs an endpoint (config or {ENV_ENDPOINT})")))?;
                let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
                Some(Box::new(HttpBackend::new(endpoint, key, timeout, config.max_tokens, config.retry_limit)?))
            }
        };
        Ok(Self { config, backend, write_lock: Mutex::new(()) })
    }

    /// Use a caller-supplied backend for live and record modes.
    pub fn with_backend(config: BackendConfig, backend: Box<dyn Backend>) -> Result<Self, GatewayError> {
        config.check()?;
        Ok(Self { config, backend: Some(backend), write_lock: Mutex::new(()) })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// `n` candidates at the coarse temperature, candidate indices `0..n`.
    pub fn complete(&self, bundle: &PromptBundle, n: u32) -> Result<Vec<String>, GatewayError> {
        self.complete_range(bundle, 0..n, self.config.temperature)
    }

    /// One response per candidate index, returned in index order whatever
    /// order the requests finish in.
    pub fn complete_range(
        &self,
        bundle: &PromptBundle,
        candidates: std::ops::Range<u32>,
        temperature: f64,
    ) -> Result<Vec<String>, GatewayError> {
        let requests: Vec<Request> = candidates
            .map(|candidate| Request {
                system: bundle.system.clone(),
                user: bundle.user.clone(),
                model: self.config.model.clone(),
                temperature,
                candidate,
            })
            .collect();
        if self.config.mode == Mode::Replay {
            return requests.iter().map(|r| self.replay(r)).collect();
        }
        let slots: Vec<Mutex<Option<Result<String, GatewayError>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.config.fanout.min(requests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = requests.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.live(req));
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot is filled")).collect()
    }

    fn replay(&self, req: &Request) -> Result<String, GatewayError> {
        let dir = self.config.transcript_dir.as_deref().expect("checked in config");
        let key = req.key();
        let path = transcript_path(dir, &key);
        if !path.exists() {
            return Err(GatewayError::ReplayMiss { key, candidate: req.candidate });
        }
        Ok(read_transcript(&path)?.response_text)
    }

    fn live(&self, req: &Request) -> Result<String, GatewayError> {
        let backend = self.backend.as_ref().ok_or_else(|| GatewayError::Config("no backend configured".into()))?;
        let completion = backend.complete(req)?;
        if self.config.mode == Mode::Record {
            let dir = self.config.transcript_dir.as_deref().expect("checked in config");
            let _guard = self.write_lock.lock().unwrap();
            write_transcript(dir, &Transcript::new(req.clone(), &completion))?;
        }
        Ok(completion.text)
    }

    /// Short connectivity probe; in replay mode reports the transcript count.
    pub fn ping(&self) -> Result<String, GatewayError> {
        match self.config.mode {
            Mode::Replay => {
                let dir = self.config.transcript_dir.as_deref().expect("checked in config");
                let n = std::fs::read_dir(dir)?.filter_map(Result::ok).filter(|e| e.path().extension().is_some_and(|x| x == "json")).count();
                Ok(format!("replay: {n} transcripts in {}", dir.display()))
            }
            Mode::Live | Mode::Record => {
                let backend = self.backend.as_ref().ok_or_else(|| GatewayError::Config("no backend configured".into()))?;
                let req = Request {
                    system: "Reply with the single word OK.".into(),
                    user: "ping".into(),
                    model: self.config.model.clone(),
                    temperature: 0.0,
                    candidate: 0,
                };
                Ok(backend.complete(&req)?.text)
            }
        }
    }
}

/// Response text that held no usable layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub raw: String,
    pub reason: String,
}

/// Pull a layout out of a free-form response. Never errors: failure is a value.
pub fn extract_layout(
    response: &str,
    vocabulary: &[String],
    default_canvas: Option<(u32, u32)>,
) -> Result<Layout, ExtractionFailure> {
    let opts = ParseOptions { strict: false, default_canvas };
    match parse_html_with(response, vocabulary, &opts) {
        Ok(parsed) if !parsed.layout.is_empty() => Ok(parsed.layout),
        Ok(_) => Err(ExtractionFailure { raw: response.to_string(), reason: "no elements found".into() }),
        Err(e) => Err(ExtractionFailure { raw: response.to_string(), reason: e.to_string() }),
    }
}
