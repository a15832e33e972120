//! Dispatch of rendered prompts to pluggable model backends.
//!
//! Three backend kinds: `http_chat` speaks the common JSON chat-completion
//! convention (one user message, images as base64 data URLs), `mock`
//! answers deterministically from a rule, and `replay` serves a recorded
//! cassette only. Every request is keyed by a content hash; within a run an
//! identical request is answered from the in-process cache instead of being
//! re-sent, and a cassette can record or replay responses across runs.

use crate::dataset::{Dataset, Triplet};
use crate::ids::Score;
use crate::prompt::{RenderedPrompt, Scenario};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Backend kind selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Mock,
    Replay,
}

/// Deterministic behaviours for the mock backend. Rules that answer from
/// ground truth need the dataset's truth table wired in at gateway
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MockRule {
    /// `<Score>t</Score>` where t is the triplet's ground truth.
    EchoTruth,
    /// `<Score>min(t+1, 5)</Score>`.
    TruthPlusOneClip5,
    /// Prose ending in `\boxed{t}`.
    BoxedTruth,
    /// Always the same text, whatever it is.
    FixedText { text: String },
    /// `OCR:` followed by the first 8 hex chars of the first image hash.
    OcrEcho,
}

/// Configuration of one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token; the
    /// token itself never appears in config files or cassettes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_rule: Option<MockRule>,
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_base_ms() -> u64 {
    250
}

fn default_parallelism() -> usize {
    4
}

impl BackendConfig {
    pub fn mock(backend_id: impl Into<String>, rule: MockRule) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            auth_env: None,
            temperature: 0.0,
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            parallelism: default_parallelism(),
            mock_rule: Some(rule),
        }
    }

    pub fn replay(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: BackendKind::Replay,
            endpoint: None,
            model: None,
            auth_env: None,
            temperature: 0.0,
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            parallelism: default_parallelism(),
            mock_rule: None,
        }
    }

    pub fn http_chat(
        backend_id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            auth_env: None,
            temperature: 0.0,
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            parallelism: default_parallelism(),
            mock_rule: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.backend_id.is_empty() {
            return Err(GatewayError::Config("backend_id must not be empty".into()));
        }
        if self.parallelism < 1 {
            return Err(GatewayError::Config(format!(
                "backend {}: parallelism must be >= 1",
                self.backend_id
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "backend {}: temperature must be >= 0",
                self.backend_id
            )));
        }
        match self.kind {
            BackendKind::HttpChat => {
                if self.endpoint.is_none() || self.model.is_none() {
                    return Err(GatewayError::Config(format!(
                        "backend {}: http_chat needs endpoint and model",
                        self.backend_id
                    )));
                }
            }
            BackendKind::Mock => {
                if self.mock_rule.is_none() {
                    return Err(GatewayError::Config(format!(
                        "backend {}: mock needs a mock_rule",
                        self.backend_id
                    )));
                }
            }
            BackendKind::Replay => {}
        }
        Ok(())
    }
}

/// One image attached to a request.
#[derive(Debug, Clone)]
pub struct ImageAttachment {
    pub sha256: String,
    pub bytes: Vec<u8>,
}

/// A fully resolved request, independent of where it goes.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub images: Vec<ImageAttachment>,
    pub scenario: Option<Scenario>,
    pub triplet: Option<Triplet>,
}

/// Raw completion plus provenance. `triplet` and `scenario` are absent for
/// non-scoring requests such as OCR.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub triplet: Option<Triplet>,
    pub backend_id: String,
    pub scenario: Option<Scenario>,
    pub raw_text: String,
    pub latency: Duration,
    pub request_hash: String,
    pub from_cache: bool,
    pub from_cassette: bool,
}

/// Content hash identifying a request: backend, model, scenario, prompt
/// text, ordered image hashes and temperature.
pub fn request_hash(config: &BackendConfig, request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    let scenario = request.scenario.map(|s| s.name()).unwrap_or("raw");
    let image_hashes: Vec<&str> = request.images.iter().map(|i| i.sha256.as_str()).collect();
    for field in [
        config.backend_id.as_str(),
        config.model.as_deref().unwrap_or(""),
        scenario,
        request.prompt_text.as_str(),
        &image_hashes.join(","),
        &format!("{:?}", config.temperature),
    ] {
        hasher.update(field.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Errors a backend can surface; transport errors are retried, the rest
/// are not.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("credentials rejected: {0}")]
    Credential(String),
    #[error("{0}")]
    Fatal(String),
}

/// Anything that can answer a completion request.
pub trait Backend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

struct MockBackend {
    rule: MockRule,
    truth: BTreeMap<Triplet, Score>,
}

impl MockBackend {
    fn truth_for(&self, request: &CompletionRequest) -> Result<Score, BackendError> {
        let triplet = request
            .triplet
            .as_ref()
            .ok_or_else(|| BackendError::Fatal("mock rule needs a triplet".into()))?;
        self.truth
            .get(triplet)
            .copied()
            .ok_or_else(|| BackendError::Fatal(format!("no ground truth for triplet {triplet}")))
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match &self.rule {
            MockRule::EchoTruth => {
                let truth = self.truth_for(request)?;
                Ok(format!("<Score>{truth}</Score>"))
            }
            MockRule::TruthPlusOneClip5 => {
                let truth = self.truth_for(request)?;
                let bumped = (truth.get() + 1).min(5);
                Ok(format!("<Score>{bumped}</Score>"))
            }
            MockRule::BoxedTruth => {
                let truth = self.truth_for(request)?;
                Ok(format!(
                    "Working through the question and answer step by step, the final \
                     strength is \\boxed{{{}}}",
                    truth.get()
                ))
            }
            MockRule::FixedText { text } => Ok(text.clone()),
            MockRule::OcrEcho => {
                let image = request.images.first().ok_or_else(|| {
                    BackendError::Fatal("ocr_echo rule needs at least one image".into())
                })?;
                let prefix: String = image.sha256.chars().take(8).collect();
                Ok(format!("OCR:{prefix}"))
            }
        }
    }
}

struct HttpChatBackend {
    endpoint: String,
    model: String,
    temperature: f64,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("http_chat needs an endpoint".into()))?;
        let model = config
            .model
            .clone()
            .ok_or_else(|| GatewayError::Config("http_chat needs a model".into()))?;
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!(
                    "backend {}: credential env var {var} is not set",
                    config.backend_id
                ))
            })?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(120))
            .build();
        Ok(Self {
            endpoint,
            model,
            temperature: config.temperature,
            token,
            agent,
        })
    }
}

impl Backend for HttpChatBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut content = vec![serde_json::json!({
            "type": "text",
            "text": request.prompt_text,
        })];
        for image in &request.images {
            let encoded = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": { "url": format!("data:image/png;base64,{encoded}") },
            }));
        }
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{ "role": "user", "content": content }],
        });

        let mut http_request = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            http_request = http_request.set("Authorization", &format!("Bearer {token}"));
        }

        let response = match http_request.send_string(&body.to_string()) {
            Ok(response) => response,
            Err(ureq::Error::Status(401 | 403, _)) => {
                return Err(BackendError::Credential(format!(
                    "{} rejected the credentials",
                    self.endpoint
                )));
            }
            Err(ureq::Error::Status(code @ (408 | 429 | 500..=599), response)) => {
                let text = response.into_string().unwrap_or_default();
                return Err(BackendError::Transport(format!("HTTP {code}: {text}")));
            }
            Err(ureq::Error::Status(code, response)) => {
                let text = response.into_string().unwrap_or_default();
                return Err(BackendError::Fatal(format!("HTTP {code}: {text}")));
            }
            Err(ureq::Error::Transport(err)) => {
                return Err(BackendError::Transport(err.to_string()));
            }
        };

        let text = response
            .into_string()
            .map_err(|e| BackendError::Transport(format!("unreadable response body: {e}")))?;
        let body: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}")))?;
        // TODO: handle providers that return message.content as an array of
        // typed parts instead of a plain string
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| {
                BackendError::Fatal(format!("malformed chat-completion response: {body}"))
            })
    }
}

/// One recorded exchange; the cassette file is JSON lines of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    pub raw_text: String,
    pub metadata: CassetteMetadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteMetadata {
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

/// Append-only store of recorded responses keyed by request hash.
pub struct Cassette {
    path: PathBuf,
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

impl Cassette {
    /// Open a cassette file; a missing file is an empty cassette.
    pub fn open(path: impl AsRef<Path>) -> Result<Cassette, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                for (idx, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry = serde_json::from_str(line).map_err(|e| {
                        GatewayError::Config(format!(
                            "cassette {} line {}: {e}",
                            path.display(),
                            idx + 1
                        ))
                    })?;
                    entries.insert(entry.request_hash.clone(), entry);
                }
            }
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
            Err(err) => {
                return Err(GatewayError::Config(format!(
                    "cassette {}: {err}",
                    path.display()
                )));
            }
        }
        Ok(Cassette {
            path,
            entries: Mutex::new(entries),
        })
    }

    pub fn lookup(&self, hash: &str) -> Option<String> {
        self.entries
            .lock()
            .expect("cassette lock")
            .get(hash)
            .map(|e| e.raw_text.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, entry: CassetteEntry) -> Result<(), GatewayError> {
        let mut entries = self.entries.lock().expect("cassette lock");
        if entries.contains_key(&entry.request_hash) {
            return Ok(());
        }
        let mut line = serde_json::to_string(&entry).expect("cassette entry serializes");
        line.push('\n');
        use std::io::Write as _;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| GatewayError::Config(format!("cassette {}: {e}", self.path.display())))?;
        file.write_all(line.as_bytes())
            .map_err(|e| GatewayError::Config(format!("cassette {}: {e}", self.path.display())))?;
        entries.insert(entry.request_hash.clone(), entry);
        Ok(())
    }
}

/// Cassette interaction mode for a gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    Off,
    Record,
    Replay,
}

#[derive(Default)]
struct CacheState {
    done: HashMap<String, (String, bool)>, // hash -> (raw_text, from_cassette)
    inflight: HashSet<String>,
}

/// In-run cache with in-flight deduplication: a second request with the
/// same hash waits for the first instead of dispatching again.
struct CompletionCache {
    state: Mutex<CacheState>,
    ready: Condvar,
}

enum Claim {
    Hit(String, bool),
    Claimed,
}

impl CompletionCache {
    fn new() -> Self {
        Self {
            state: Mutex::new(CacheState::default()),
            ready: Condvar::new(),
        }
    }

    fn claim(&self, hash: &str) -> Claim {
        let mut state = self.state.lock().expect("cache lock");
        loop {
            if let Some((raw, from_cassette)) = state.done.get(hash) {
                return Claim::Hit(raw.clone(), *from_cassette);
            }
            if !state.inflight.contains(hash) {
                state.inflight.insert(hash.to_owned());
                return Claim::Claimed;
            }
            state = self.ready.wait(state).expect("cache lock");
        }
    }

    fn fulfill(&self, hash: &str, raw: String, from_cassette: bool) {
        let mut state = self.state.lock().expect("cache lock");
        state.inflight.remove(hash);
        state.done.insert(hash.to_owned(), (raw, from_cassette));
        self.ready.notify_all();
    }

    fn abandon(&self, hash: &str) {
        let mut state = self.state.lock().expect("cache lock");
        state.inflight.remove(hash);
        self.ready.notify_all();
    }
}

/// A configured backend plus cache and optional cassette.
pub struct Gateway {
    config: BackendConfig,
    live: Option<Box<dyn Backend>>,
    cassette: Option<Cassette>,
    mode: CassetteMode,
    cache: CompletionCache,
}

impl Gateway {
    /// Build a gateway from config. Mock rules that answer from ground
    /// truth take it from `truth`; `cassette` and `record` select the
    /// cassette mode (a cassette without `record` replays).
    pub fn new(
        config: BackendConfig,
        truth: Option<&BTreeMap<Triplet, Score>>,
        cassette_path: Option<&Path>,
        record: bool,
    ) -> Result<Gateway, GatewayError> {
        config.validate()?;
        let live: Option<Box<dyn Backend>> = match config.kind {
            BackendKind::Mock => Some(Box::new(MockBackend {
                rule: config.mock_rule.clone().expect("validated"),
                truth: truth.cloned().unwrap_or_default(),
            })),
            BackendKind::HttpChat => Some(Box::new(HttpChatBackend::from_config(&config)?)),
            BackendKind::Replay => None,
        };
        Self::assemble(config, live, cassette_path, record)
    }

    /// Build a gateway around a caller-provided backend implementation.
    pub fn with_backend(
        config: BackendConfig,
        backend: Box<dyn Backend>,
        cassette_path: Option<&Path>,
        record: bool,
    ) -> Result<Gateway, GatewayError> {
        Self::assemble(config, Some(backend), cassette_path, record)
    }

    fn assemble(
        config: BackendConfig,
        live: Option<Box<dyn Backend>>,
        cassette_path: Option<&Path>,
        record: bool,
    ) -> Result<Gateway, GatewayError> {
        let cassette = cassette_path.map(Cassette::open).transpose()?;
        let mode = if config.kind == BackendKind::Replay {
            if cassette.is_none() {
                return Err(GatewayError::Config(format!(
                    "backend {}: replay kind needs a cassette path",
                    config.backend_id
                )));
            }
            CassetteMode::Replay
        } else if cassette.is_some() {
            if record {
                CassetteMode::Record
            } else {
                CassetteMode::Replay
            }
        } else {
            CassetteMode::Off
        };
        if mode == CassetteMode::Replay && config.kind != BackendKind::Replay && live.is_none() {
            return Err(GatewayError::Config("replay mode without cassette".into()));
        }
        Ok(Gateway {
            config,
            live,
            cassette,
            mode,
            cache: CompletionCache::new(),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    /// Complete a rendered scoring prompt, resolving attachments against
    /// the dataset.
    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        dataset: &Dataset,
    ) -> Result<CompletionResult, GatewayError> {
        let mut images = Vec::with_capacity(prompt.attachments.len());
        for image_ref in &prompt.attachments {
            let bytes = dataset
                .image_bytes(image_ref)
                .map_err(|e| GatewayError::Input(e.to_string()))?;
            images.push(ImageAttachment {
                sha256: image_ref.sha256.clone(),
                bytes,
            });
        }
        self.complete_request(CompletionRequest {
            prompt_text: prompt.text.clone(),
            images,
            scenario: Some(prompt.scenario),
            triplet: Some(prompt.triplet.clone()),
        })
    }

    /// Complete an arbitrary request (scoring or OCR), honouring cache and
    /// cassette.
    pub fn complete_request(
        &self,
        request: CompletionRequest,
    ) -> Result<CompletionResult, GatewayError> {
        let started = Instant::now();
        let hash = request_hash(&self.config, &request);

        match self.cache.claim(&hash) {
            Claim::Hit(raw_text, from_cassette) => Ok(CompletionResult {
                triplet: request.triplet,
                backend_id: self.config.backend_id.clone(),
                scenario: request.scenario,
                raw_text,
                latency: started.elapsed(),
                request_hash: hash,
                from_cache: true,
                from_cassette,
            }),
            Claim::Claimed => {
                let produced = self.produce(&hash, &request);
                match produced {
                    Ok((raw_text, from_cassette)) => {
                        self.cache.fulfill(&hash, raw_text.clone(), from_cassette);
                        Ok(CompletionResult {
                            triplet: request.triplet,
                            backend_id: self.config.backend_id.clone(),
                            scenario: request.scenario,
                            raw_text,
                            latency: started.elapsed(),
                            request_hash: hash,
                            from_cache: false,
                            from_cassette,
                        })
                    }
                    Err(err) => {
                        self.cache.abandon(&hash);
                        Err(err)
                    }
                }
            }
        }
    }

    /// Produce a raw response for a hash, from cassette or live backend.
    fn produce(
        &self,
        hash: &str,
        request: &CompletionRequest,
    ) -> Result<(String, bool), GatewayError> {
        match self.mode {
            CassetteMode::Replay => {
                let cassette = self.cassette.as_ref().expect("replay mode has cassette");
                cassette.lookup(hash).map(|raw| (raw, true)).ok_or_else(|| {
                    GatewayError::CassetteMiss {
                        request_hash: hash.to_owned(),
                    }
                })
            }
            CassetteMode::Record => {
                let cassette = self.cassette.as_ref().expect("record mode has cassette");
                if let Some(raw) = cassette.lookup(hash) {
                    return Ok((raw, true));
                }
                let raw = self.call_with_retries(request)?;
                cassette.record(CassetteEntry {
                    request_hash: hash.to_owned(),
                    raw_text: raw.clone(),
                    metadata: CassetteMetadata {
                        backend_id: self.config.backend_id.clone(),
                        model: self.config.model.clone(),
                        scenario: request.scenario.map(|s| s.name().to_owned()),
                    },
                })?;
                Ok((raw, false))
            }
            CassetteMode::Off => Ok((self.call_with_retries(request)?, false)),
        }
    }

    fn call_with_retries(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let backend = self.live.as_ref().ok_or_else(|| {
            GatewayError::Config("no live backend available for this request".into())
        })?;
        let mut attempt: u32 = 0;
        loop {
            match backend.send(request) {
                Ok(raw) => return Ok(raw),
                Err(BackendError::Credential(message)) => {
                    return Err(GatewayError::Credential(message));
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Backend(message));
                }
                Err(BackendError::Transport(message)) => {
                    if attempt >= self.config.max_retries {
                        return Err(GatewayError::Transport {
                            message,
                            attempts: attempt + 1,
                        });
                    }
                    let backoff = self.config.backoff_base_ms.saturating_mul(1 << attempt);
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
            }
        }
    }
}

/// One entry of a batch run: the triplet with either its completion or the
/// error that stopped it. Failures never abort the batch.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub triplet: Triplet,
    pub outcome: Result<CompletionResult, String>,
}

/// Run one scenario over a list of triplets with bounded concurrency.
/// Results come back in input order regardless of completion order; the
/// caller passes triplets in canonical order.
pub fn run_batch(
    gateway: &Gateway,
    triplets: &[Triplet],
    scenario: Scenario,
    dataset: &Dataset,
) -> Vec<BatchItem> {
    let n = triplets.len();
    let results: Mutex<Vec<Option<BatchItem>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = gateway.config.parallelism.min(n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= n {
                    break;
                }
                let triplet = &triplets[index];
                let outcome = crate::prompt::build_prompt(scenario, triplet, dataset)
                    .map_err(|e| e.to_string())
                    .and_then(|prompt| {
                        gateway
                            .complete(&prompt, dataset)
                            .map_err(|e| e.to_string())
                    });
                let item = BatchItem {
                    triplet: triplet.clone(),
                    outcome,
                };
                results.lock().expect("batch lock")[index] = Some(item);
            });
        }
    });

    results
        .into_inner()
        .expect("batch lock")
        .into_iter()
        .map(|item| item.expect("every index filled"))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("credential error (not retried): {0}")]
    Credential(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("cassette miss for request hash {request_hash}")]
    CassetteMiss { request_hash: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("input error: {0}")]
    Input(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> CompletionRequest {
        CompletionRequest {
            prompt_text: text.to_owned(),
            images: vec![],
            scenario: Some(Scenario::Generic),
            triplet: Some(Triplet::new("Q1", "cl1", "s01")),
        }
    }

    fn truth_table(score: u8) -> BTreeMap<Triplet, Score> {
        let mut truth = BTreeMap::new();
        truth.insert(Triplet::new("Q1", "cl1", "s01"), Score::new(score).unwrap());
        truth
    }

    /// Counting backend for cache and retry assertions.
    struct CountingBackend {
        calls: AtomicUsize,
        fail_first: usize,
        response: String,
    }

    impl Backend for CountingBackend {
        fn send(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call < self.fail_first {
                Err(BackendError::Transport("injected failure".into()))
            } else {
                Ok(self.response.clone())
            }
        }
    }

    #[test]
    fn mock_echoes_ground_truth() {
        let gateway = Gateway::new(
            BackendConfig::mock("m", MockRule::EchoTruth),
            Some(&truth_table(4)),
            None,
            false,
        )
        .unwrap();
        let result = gateway.complete_request(request("prompt")).unwrap();
        assert_eq!(result.raw_text, "<Score>4</Score>");
        assert!(!result.from_cache);
    }

    #[test]
    fn truth_plus_one_clips_at_five() {
        for (truth, expected) in [(3u8, "4"), (5u8, "5")] {
            let gateway = Gateway::new(
                BackendConfig::mock("m", MockRule::TruthPlusOneClip5),
                Some(&truth_table(truth)),
                None,
                false,
            )
            .unwrap();
            let result = gateway.complete_request(request("prompt")).unwrap();
            assert_eq!(result.raw_text, format!("<Score>{expected}</Score>"));
        }
    }

    #[test]
    fn ocr_echo_uses_first_image_hash() {
        let gateway = Gateway::new(
            BackendConfig::mock("m", MockRule::OcrEcho),
            None,
            None,
            false,
        )
        .unwrap();
        let mut req = request("transcribe");
        req.triplet = None;
        req.scenario = None;
        req.images.push(ImageAttachment {
            sha256: "abcdef0123456789".into(),
            bytes: vec![1, 2, 3],
        });
        let result = gateway.complete_request(req).unwrap();
        assert_eq!(result.raw_text, "OCR:abcdef01");
    }

    #[test]
    fn identical_requests_hit_cache_not_backend() {
        let backend = Box::new(CountingBackend {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            response: "<Score>2</Score>".into(),
        });
        let gateway = Gateway::with_backend(
            BackendConfig::mock("m", MockRule::EchoTruth),
            backend,
            None,
            false,
        )
        .unwrap();
        let first = gateway.complete_request(request("same")).unwrap();
        let second = gateway.complete_request(request("same")).unwrap();
        assert!(!first.from_cache);
        assert!(second.from_cache);
        assert_eq!(first.raw_text, second.raw_text);
        assert_eq!(first.request_hash, second.request_hash);
    }

    /// Responds slowly so concurrent identical requests overlap in flight.
    struct SlowBackend {
        calls: std::sync::Arc<AtomicUsize>,
    }

    impl Backend for SlowBackend {
        fn send(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(40));
            Ok("<Score>1</Score>".into())
        }
    }

    #[test]
    fn concurrent_identical_requests_share_one_dispatch() {
        let calls = std::sync::Arc::new(AtomicUsize::new(0));
        let gateway = Gateway::with_backend(
            BackendConfig::mock("m", MockRule::EchoTruth),
            Box::new(SlowBackend {
                calls: calls.clone(),
            }),
            None,
            false,
        )
        .unwrap();

        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    let result = gateway.complete_request(request("contended")).unwrap();
                    assert_eq!(result.raw_text, "<Score>1</Score>");
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1, "in-flight dedup");
    }

    #[test]
    fn transient_failures_are_retried_up_to_limit() {
        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.max_retries = 2;
        config.backoff_base_ms = 1;
        let backend = Box::new(CountingBackend {
            calls: AtomicUsize::new(0),
            fail_first: 2,
            response: "ok".into(),
        });
        let gateway = Gateway::with_backend(config, backend, None, false).unwrap();
        let result = gateway.complete_request(request("retry me")).unwrap();
        assert_eq!(result.raw_text, "ok");
    }

    struct RejectingBackend {
        calls: std::sync::Arc<AtomicUsize>,
    }

    impl Backend for RejectingBackend {
        fn send(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Credential("bad token".into()))
        }
    }

    #[test]
    fn credential_errors_are_not_retried() {
        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.max_retries = 5;
        let calls = std::sync::Arc::new(AtomicUsize::new(0));
        let backend = Box::new(RejectingBackend {
            calls: calls.clone(),
        });
        let gateway = Gateway::with_backend(config, backend, None, false).unwrap();
        match gateway.complete_request(request("auth")) {
            Err(GatewayError::Credential(_)) => {}
            other => panic!("expected credential error, got {other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1, "no retry on auth failure");
    }

    #[test]
    fn exhausted_retries_surface_transport_error() {
        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.max_retries = 1;
        config.backoff_base_ms = 1;
        let backend = Box::new(CountingBackend {
            calls: AtomicUsize::new(0),
            fail_first: usize::MAX,
            response: String::new(),
        });
        let gateway = Gateway::with_backend(config, backend, None, false).unwrap();
        match gateway.complete_request(request("doomed")) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");

        let recorder = Gateway::new(
            BackendConfig::mock("m", MockRule::EchoTruth),
            Some(&truth_table(3)),
            Some(&path),
            true,
        )
        .unwrap();
        let recorded = recorder.complete_request(request("hello")).unwrap();
        assert!(!recorded.from_cassette);

        let replayer = Gateway::new(BackendConfig::replay("m"), None, Some(&path), false).unwrap();
        let replayed = replayer.complete_request(request("hello")).unwrap();
        assert_eq!(replayed.raw_text, recorded.raw_text);
        assert!(replayed.from_cassette);

        let again = replayer.complete_request(request("hello")).unwrap();
        assert_eq!(again.raw_text, recorded.raw_text);
        assert!(again.from_cache);
    }

    #[test]
    fn replay_miss_names_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let gateway = Gateway::new(BackendConfig::replay("m"), None, Some(&path), false).unwrap();
        match gateway.complete_request(request("unknown")) {
            Err(GatewayError::CassetteMiss { request_hash }) => {
                assert_eq!(request_hash.len(), 64);
            }
            other => panic!("expected cassette miss, got {other:?}"),
        }
    }

    #[test]
    fn request_hash_tracks_every_field() {
        let config_a = BackendConfig::mock("a", MockRule::EchoTruth);
        let mut config_b = config_a.clone();
        config_b.backend_id = "b".into();
        let base = request("text");
        assert_ne!(
            request_hash(&config_a, &base),
            request_hash(&config_b, &base)
        );

        let mut hotter = config_a.clone();
        hotter.temperature = 0.7;
        assert_ne!(request_hash(&config_a, &base), request_hash(&hotter, &base));

        let other_text = request("other text");
        assert_ne!(
            request_hash(&config_a, &base),
            request_hash(&config_a, &other_text)
        );

        let mut with_image = request("text");
        with_image.images.push(ImageAttachment {
            sha256: "aa".into(),
            bytes: vec![],
        });
        assert_ne!(
            request_hash(&config_a, &base),
            request_hash(&config_a, &with_image)
        );
    }

    /// Backend that permanently fails one specific question id.
    struct SelectiveFailBackend {
        poison_question: String,
    }

    impl Backend for SelectiveFailBackend {
        fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
            match &request.triplet {
                Some(t) if t.question_id.as_str() == self.poison_question => {
                    Err(BackendError::Transport("poisoned".into()))
                }
                _ => Ok("<Score>3</Score>".into()),
            }
        }
    }

    #[test]
    fn batch_embeds_failures_without_aborting() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = crate::fixture::generate(dir.path(), 5).unwrap();
        let triplets: Vec<Triplet> = dataset.triplets().into_iter().take(15).collect();
        let poison_question = triplets[1].question_id.as_str().to_owned();

        let mut config = BackendConfig::mock("selective", MockRule::EchoTruth);
        config.max_retries = 0;
        config.parallelism = 4;
        let gateway = Gateway::with_backend(
            config,
            Box::new(SelectiveFailBackend {
                poison_question: poison_question.clone(),
            }),
            None,
            false,
        )
        .unwrap();

        let items = run_batch(&gateway, &triplets, Scenario::Generic, &dataset);
        assert_eq!(items.len(), triplets.len());
        for (item, triplet) in items.iter().zip(&triplets) {
            assert_eq!(&item.triplet, triplet, "canonical order preserved");
            if triplet.question_id.as_str() == poison_question {
                assert!(item.outcome.is_err());
            } else {
                assert!(item.outcome.is_ok());
            }
        }
        assert!(items.iter().any(|i| i.outcome.is_err()));
        assert!(items.iter().filter(|i| i.outcome.is_ok()).count() > 0);
    }

    #[test]
    fn batch_order_is_independent_of_parallelism() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = crate::fixture::generate(dir.path(), 5).unwrap();
        let triplets = dataset.triplets();

        let run_with = |parallelism: usize| {
            let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
            config.parallelism = parallelism;
            let gateway =
                Gateway::new(config, Some(dataset.ground_truth_map()), None, false).unwrap();
            run_batch(&gateway, &triplets, Scenario::Generic, &dataset)
                .into_iter()
                .map(|item| (item.triplet, item.outcome.map(|r| r.raw_text)))
                .collect::<Vec<_>>()
        };

        let serial = run_with(1);
        let parallel = run_with(8);
        assert_eq!(serial.len(), triplets.len());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.parallelism = 0;
        assert!(config.validate().is_err());

        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.temperature = -1.0;
        assert!(config.validate().is_err());

        let mut config = BackendConfig::mock("m", MockRule::EchoTruth);
        config.mock_rule = None;
        assert!(config.validate().is_err());

        assert!(BackendConfig {
            endpoint: None,
            ..BackendConfig::http_chat("h", "http://x", "m")
        }
        .validate()
        .is_err());
    }
}
