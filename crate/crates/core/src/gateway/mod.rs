//! Provider-agnostic model client: request construction, retries, refusal
//! detection, an idempotent response store and a usage ledger.

pub mod cost;
pub mod provider;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tiler::TileImage;

pub use cost::{estimate_cost, Cost, Outcome, PriceTable, Rates, UsageLedger, UsageRecord};
pub use provider::{
    image_key, ApiFlavor, HttpProvider, MockProvider, MockStep, Provider, ProviderFailure, ProviderReply,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt asset {0:?} is missing or empty")]
    MissingPromptAsset(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("provider error for request {request_id} after {attempts} attempt(s): {message}")]
    Provider { request_id: String, attempts: u32, message: String },
    #[error("AuthError: {0}")]
    Auth(String),
    #[error("model refused request {request_id}: {text}")]
    RefusalDetected { request_id: String, text: String },
    #[error("no price for model {0:?}")]
    UnknownModel(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("response store: {0}")]
    Store(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub provider_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub reasoning_enabled: bool,
    pub reasoning_budget_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            provider_id: "mock".into(),
            model_id: "mock-vision".into(),
            temperature: 0.0,
            max_output_tokens: 16_384,
            reasoning_enabled: false,
            reasoning_budget_tokens: 0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_output_tokens must be positive".into()));
        }
        if !self.reasoning_enabled && self.reasoning_budget_tokens != 0 {
            return Err(GatewayError::InvalidParams("reasoning budget set while reasoning is disabled".into()));
        }
        if self.provider_id.trim().is_empty() || self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidParams("provider_id and model_id are required".into()));
        }
        Ok(())
    }
}

/// One model call. Requests without an image carry text-only tasks
/// (merging fragments, enrichment, adjudication).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionRequest {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    pub media_type: String,
    pub prompt: String,
    pub params: ModelParams,
}

impl VisionRequest {
    pub fn new(
        image_b64: Option<String>,
        media_type: &str,
        prompt: impl Into<String>,
        params: ModelParams,
    ) -> Result<Self, GatewayError> {
        params.validate()?;
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(GatewayError::MissingPromptAsset("<inline>".into()));
        }
        let mut req = Self { request_id: String::new(), image_b64, media_type: media_type.to_string(), prompt, params };
        req.request_id = req.content_hash();
        Ok(req)
    }

    pub fn text(prompt: impl Into<String>, params: ModelParams) -> Result<Self, GatewayError> {
        Self::new(None, "text/plain", prompt, params)
    }

    /// SHA-256 over everything that influences the reply, hex, 32 digits.
    pub fn content_hash(&self) -> String {
        let p = &self.params;
        let mut h = Sha256::new();
        for part in [
            p.provider_id.as_str(),
            p.model_id.as_str(),
            &format!("{:?}", p.temperature),
            &p.max_output_tokens.to_string(),
            &p.reasoning_enabled.to_string(),
            &p.reasoning_budget_tokens.to_string(),
            &self.media_type,
            &self.prompt,
            self.image_b64.as_deref().unwrap_or(""),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())[..32].to_string()
    }
}

const BUILTIN_PROMPTS: [(&str, &str); 5] = [
    ("helle_nine_field", include_str!("../../prompts/helle_nine_field.md")),
    ("hupel_tei", include_str!("../../prompts/hupel_tei.md")),
    ("tei_merge", include_str!("../../prompts/tei_merge.md")),
    ("enrich", include_str!("../../prompts/enrich.md")),
    ("adjudicate", include_str!("../../prompts/adjudicate.md")),
];

/// Prompt texts by asset id. Files `{id}.md` or `{id}.txt` in the override
/// directory shadow the built-in assets.
#[derive(Debug, Clone, Default)]
pub struct PromptLibrary {
    dir: Option<PathBuf>,
    inline: BTreeMap<String, String>,
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), inline: BTreeMap::new() }
    }

    pub fn with_asset(mut self, id: impl Into<String>, text: impl Into<String>) -> Self {
        self.inline.insert(id.into(), text.into());
        self
    }

    pub fn get(&self, id: &str) -> Result<String, GatewayError> {
        let text = if let Some(t) = self.inline.get(id) {
            Some(t.clone())
        } else if let Some(t) = self.dir.as_deref().and_then(|d| read_asset(d, id)) {
            Some(t)
        } else {
            BUILTIN_PROMPTS.iter().find(|(k, _)| *k == id).map(|(_, t)| t.to_string())
        };
        match text {
            Some(t) if !t.trim().is_empty() => Ok(t),
            _ => Err(GatewayError::MissingPromptAsset(id.to_string())),
        }
    }

    pub fn builtin_ids() -> impl Iterator<Item = &'static str> {
        BUILTIN_PROMPTS.iter().map(|(k, _)| *k)
    }
}

fn read_asset(dir: &Path, id: &str) -> Option<String> {
    ["md", "txt"].iter().find_map(|ext| std::fs::read_to_string(dir.join(format!("{id}.{ext}"))).ok())
}

/// Level-2 headings (`## ...`) of a prompt, in order.
pub fn prompt_sections(text: &str) -> Vec<&str> {
    text.lines().filter_map(|l| l.strip_prefix("## ")).map(str::trim).collect()
}

pub fn build_vision_request(
    tile: &TileImage,
    prompt_asset_id: &str,
    prompts: &PromptLibrary,
    params: &ModelParams,
) -> Result<VisionRequest, GatewayError> {
    let prompt = prompts.get(prompt_asset_id)?;
    VisionRequest::new(Some(tile.base64()), tile.media_type(), prompt, params.clone())
}

/// Prompt asset followed by task data, for text-only requests.
pub fn build_text_request(
    prompt_asset_id: &str,
    data: &str,
    prompts: &PromptLibrary,
    params: &ModelParams,
) -> Result<VisionRequest, GatewayError> {
    let prompt = prompts.get(prompt_asset_id)?;
    VisionRequest::text(format!("{}\n\n{data}", prompt.trim_end()), params.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: u32,
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base_delay: Duration::from_secs(1), factor: 2, max_retries: 3 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry.saturating_sub(1))
    }
}

pub const DEFAULT_REFUSAL_PHRASES: [&str; 4] = [
    "too detailed and contains too much information",
    "i can't help with",
    "i cannot help with",
    "i'm unable to transcribe",
];

/// Classifies prose replies that decline the task.
#[derive(Debug, Clone)]
pub struct RefusalDetector {
    phrases: Vec<String>,
}

impl Default for RefusalDetector {
    fn default() -> Self {
        Self::new(DEFAULT_REFUSAL_PHRASES)
    }
}

impl RefusalDetector {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        Self { phrases: phrases.into_iter().map(|p| p.as_ref().to_lowercase()).collect() }
    }

    /// Structured replies (JSON, XML, fenced blocks) are never refusals.
    pub fn is_refusal(&self, body: &str) -> bool {
        let t = body.trim_start();
        if t.starts_with(['[', '{', '<']) || t.starts_with("```") {
            return false;
        }
        let lower = body.to_lowercase();
        self.phrases.iter().any(|p| lower.contains(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub request_id: String,
    pub body: String,
    pub usage: UsageRecord,
    /// True when served from the response store without contacting the provider.
    #[serde(skip)]
    pub from_store: bool,
}

impl Response {
    pub fn outcome(&self) -> Outcome {
        self.usage.outcome
    }

    /// The reply body, or [`GatewayError::RefusalDetected`].
    pub fn into_body(self) -> Result<String, GatewayError> {
        match self.usage.outcome {
            Outcome::Refusal => Err(GatewayError::RefusalDetected { request_id: self.request_id, text: self.body }),
            _ => Ok(self.body),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredResponse {
    request_id: String,
    body: String,
    usage: UsageRecord,
    prompt: String,
    params: ModelParams,
    media_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_sha256: Option<String>,
}

#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub struct Gateway {
    provider: Arc<dyn Provider>,
    ledger: UsageLedger,
    store: Option<PathBuf>,
    retry: RetryPolicy,
    refusals: RefusalDetector,
    permits: Permits,
    max_in_flight: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("store", &self.store)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            ledger: UsageLedger::in_memory(),
            store: None,
            retry: RetryPolicy::default(),
            refusals: RefusalDetector::default(),
            permits: Permits { free: Mutex::new(DEFAULT_MAX_IN_FLIGHT), cv: Condvar::new() },
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Persists responses as `{dir}/{request_id}.json` and answers repeated
    /// request ids from there.
    pub fn with_store(mut self, dir: impl Into<PathBuf>) -> Self {
        self.store = Some(dir.into());
        self
    }

    pub fn with_ledger(mut self, ledger: UsageLedger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_refusals(mut self, refusals: RefusalDetector) -> Self {
        self.refusals = refusals;
        self
    }

    pub fn with_max_in_flight(mut self, k: usize) -> Self {
        let k = k.max(1);
        self.permits = Permits { free: Mutex::new(k), cv: Condvar::new() };
        self.max_in_flight = k;
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    fn stored_path(&self, request_id: &str) -> Option<PathBuf> {
        self.store.as_ref().map(|d| d.join(format!("{request_id}.json")))
    }

    /// Looks up a stored response without contacting the provider.
    pub fn stored(&self, request_id: &str) -> Result<Option<Response>, GatewayError> {
        let Some(path) = self.stored_path(request_id) else { return Ok(None) };
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let stored: StoredResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        Ok(Some(Response { request_id: stored.request_id, body: stored.body, usage: stored.usage, from_store: true }))
    }

    fn persist(&self, request: &VisionRequest, response: &Response) -> Result<(), GatewayError> {
        let Some(path) = self.stored_path(&request.request_id) else { return Ok(()) };
        let stored = StoredResponse {
            request_id: response.request_id.clone(),
            body: response.body.clone(),
            usage: response.usage.clone(),
            prompt: request.prompt.clone(),
            params: request.params.clone(),
            media_type: request.media_type.clone(),
            image_sha256: request.image_b64.as_ref().map(|i| hex::encode(Sha256::digest(i.as_bytes()))),
        };
        let json = serde_json::to_string_pretty(&stored).expect("stored response serialises");
        crate::fsutil::write_atomic(&path, json.as_bytes())?;
        Ok(())
    }

    /// Sends one request, retrying transient failures with exponential backoff.
    ///
    /// A request id already in the store is answered from there. Every call
    /// that reaches the provider appends exactly one usage record, including
    /// calls that end in an error.
    pub fn submit(&self, request: &VisionRequest) -> Result<Response, GatewayError> {
        if let Some(hit) = self.stored(&request.request_id)? {
            return Ok(hit);
        }
        let _permit = self.permits.acquire();
        let started = Instant::now();
        let mut attempts = 0u32;
        let reply = loop {
            attempts += 1;
            match self.provider.complete(request) {
                Ok(reply) => break Ok(reply),
                Err(ProviderFailure::Transient(_)) if attempts <= self.retry.max_retries => {
                    std::thread::sleep(self.retry.delay(attempts));
                }
                Err(ProviderFailure::Transient(msg)) | Err(ProviderFailure::Fatal(msg)) => break Err(msg),
                Err(ProviderFailure::Auth(msg)) => return Err(GatewayError::Auth(msg)),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let mut usage = UsageRecord {
            request_id: request.request_id.clone(),
            provider_id: request.params.provider_id.clone(),
            model_id: request.params.model_id.clone(),
            input_tokens: 0,
            output_tokens: 0,
            latency_ms,
            attempt_count: attempts,
            outcome: Outcome::Error,
            tokens_reported: false,
        };
        match reply {
            Err(message) => {
                self.ledger.record(usage)?;
                Err(GatewayError::Provider { request_id: request.request_id.clone(), attempts, message })
            }
            Ok(reply) => {
                usage.tokens_reported = reply.input_tokens.is_some() && reply.output_tokens.is_some();
                usage.input_tokens = reply.input_tokens.unwrap_or(0);
                usage.output_tokens = reply.output_tokens.unwrap_or(0);
                usage.outcome = if self.refusals.is_refusal(&reply.body) { Outcome::Refusal } else { Outcome::Ok };
                let response =
                    Response { request_id: request.request_id.clone(), body: reply.body, usage, from_store: false };
                self.persist(request, &response)?;
                self.ledger.record(response.usage.clone())?;
                Ok(response)
            }
        }
    }

    /// Submits many requests with at most `max_in_flight` running at once.
    /// Results are in input order.
    pub fn submit_all(&self, requests: &[VisionRequest]) -> Vec<Result<Response, GatewayError>> {
        self.submit_all_with(requests, |_, _| {})
    }

    /// Like [`Gateway::submit_all`], calling `on_done(index, result)` as each
    /// request finishes.
    pub fn submit_all_with(
        &self,
        requests: &[VisionRequest],
        on_done: impl Fn(usize, &Result<Response, GatewayError>) + Sync,
    ) -> Vec<Result<Response, GatewayError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Response, GatewayError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let workers = self.max_in_flight.min(requests.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let r = self.submit(req);
                    on_done(i, &r);
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every request ran")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn req(prompt: &str) -> VisionRequest {
        VisionRequest::new(Some("iVBORw0KGgo=".into()), "image/png", prompt, params()).unwrap()
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { base_delay: Duration::ZERO, ..Default::default() }
    }

    #[test]
    fn request_id_is_deterministic() {
        assert_eq!(req("p").request_id, req("p").request_id);
        assert_ne!(req("p").request_id, req("q").request_id);
        let mut other = params();
        other.temperature = 0.5;
        let r = VisionRequest::new(Some("iVBORw0KGgo=".into()), "image/png", "p", other).unwrap();
        assert_ne!(r.request_id, req("p").request_id);
    }

    #[test]
    fn params_validation() {
        let mut p = params();
        p.temperature = 1.5;
        assert!(matches!(p.validate(), Err(GatewayError::InvalidParams(_))));
        let mut p = params();
        p.reasoning_budget_tokens = 100;
        assert!(p.validate().is_err());
        p.reasoning_enabled = true;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn prompt_assets() {
        let lib = PromptLibrary::builtin();
        let helle = lib.get("helle_nine_field").unwrap();
        assert_eq!(prompt_sections(&helle), vec!["Structure", "Accuracy", "Output schema"]);
        for id in PromptLibrary::builtin_ids() {
            assert!(lib.get(id).is_ok(), "{id}");
        }
        assert!(matches!(lib.get("nope"), Err(GatewayError::MissingPromptAsset(_))));
        let lib = lib.with_asset("blank", "  \n");
        assert!(matches!(lib.get("blank"), Err(GatewayError::MissingPromptAsset(_))));
    }

    #[test]
    fn prompt_directory_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("hupel_tei.md"), "custom").unwrap();
        let lib = PromptLibrary::with_dir(dir.path());
        assert_eq!(lib.get("hupel_tei").unwrap(), "custom");
        assert!(lib.get("enrich").unwrap().contains("## Output schema"));
    }

    #[test]
    fn echo_fixture_single_attempt() {
        let r = req("p");
        let mock = Arc::new(MockProvider::new().with_reply(r.request_id.clone(), "[]"));
        let gw = Gateway::new(mock);
        let resp = gw.submit(&r).unwrap();
        assert_eq!(resp.body, "[]");
        assert_eq!(resp.usage.attempt_count, 1);
        assert_eq!(resp.outcome(), Outcome::Ok);
        assert_eq!(gw.ledger().len(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let r = req("p");
        let mock = Arc::new(MockProvider::new().with_script(
            r.request_id.clone(),
            [MockStep::Fail("503".into()), MockStep::Fail("503".into()), MockStep::Reply("[]".into())],
        ));
        let gw = Gateway::new(mock.clone()).with_retry(fast());
        let resp = gw.submit(&r).unwrap();
        assert_eq!((resp.usage.attempt_count, resp.outcome()), (3, Outcome::Ok));
        assert_eq!(mock.calls().len(), 3);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let r = req("p");
        let mock = Arc::new(
            MockProvider::new().with_script(r.request_id.clone(), (0..10).map(|_| MockStep::Fail("x".into()))),
        );
        let gw = Gateway::new(mock.clone()).with_retry(fast());
        let err = gw.submit(&r).unwrap_err();
        assert!(matches!(err, GatewayError::Provider { attempts: 4, .. }));
        assert_eq!(gw.ledger().records()[0].outcome, Outcome::Error);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!([p.delay(1), p.delay(2), p.delay(3)], [1, 2, 4].map(Duration::from_secs));
    }

    #[test]
    fn refusal_is_an_outcome() {
        let r = req("p");
        let text = "Unfortunately the image is too detailed and contains too much information to transcribe.";
        let gw = Gateway::new(Arc::new(MockProvider::new().with_reply(r.request_id.clone(), text)));
        let resp = gw.submit(&r).unwrap();
        assert_eq!(resp.outcome(), Outcome::Refusal);
        assert!(matches!(resp.into_body(), Err(GatewayError::RefusalDetected { .. })));
        assert!(!RefusalDetector::default()
            .is_refusal("[{\"headword_et\": \"too detailed and contains too much information\"}]"));
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let r = req("p");
        let mock = Arc::new(MockProvider::new().with_script(r.request_id.clone(), [MockStep::Auth("bad key".into())]));
        let gw = Gateway::new(mock.clone()).with_retry(fast());
        assert!(matches!(gw.submit(&r), Err(GatewayError::Auth(_))));
        assert_eq!(mock.calls().len(), 1);
    }

    #[test]
    fn stored_responses_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let r = req("p");
        let mock = Arc::new(MockProvider::new().with_reply(r.request_id.clone(), "[]"));
        let gw = Gateway::new(mock.clone()).with_store(dir.path());
        let first = gw.submit(&r).unwrap();
        let again = gw.submit(&r).unwrap();
        assert!(again.from_store && !first.from_store);
        assert_eq!(again.body, first.body);
        assert_eq!(mock.calls().len(), 1);
        assert_eq!(gw.ledger().len(), 1);

        let fresh = Gateway::new(mock.clone()).with_store(dir.path());
        fresh.submit(&r).unwrap();
        assert_eq!(mock.calls().len(), 1);
    }

    #[test]
    fn submit_all_preserves_order() {
        let reqs: Vec<_> = (0..10).map(|i| req(&format!("p{i}"))).collect();
        let mut mock = MockProvider::new();
        for (i, r) in reqs.iter().enumerate() {
            mock = mock.with_reply(r.request_id.clone(), format!("reply {i}"));
        }
        let gw = Gateway::new(Arc::new(mock)).with_max_in_flight(3);
        let out = gw.submit_all(&reqs);
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap().body, format!("reply {i}"));
        }
        assert_eq!(gw.ledger().len(), 10);
    }
}
