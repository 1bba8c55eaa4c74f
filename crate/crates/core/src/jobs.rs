//! Multi-page jobs: a file-based store, the per-page state machine, and
//! unified exports.
//!
//! Layout under the store root:
//!
//! ```text
//! jobs/{job_id}/manifest.json            job config and page states
//! jobs/{job_id}/scans/{file}             submitted page images
//! jobs/{job_id}/tiles/{page}_{c}{s}.png  tile rasters
//! jobs/{job_id}/tiles/{page}.plan.json   tile geometry
//! jobs/{job_id}/tiles/{page}.requests.json  request id per tile
//! jobs/{job_id}/raw/{request_id}.json    provider replies, never rewritten
//! jobs/{job_id}/merged/{page}.json       merged page content
//! jobs/{job_id}/merged/{page}.xml        same, as TEI (TEI jobs only)
//! jobs/{job_id}/merged/{page}.decisions.jsonl
//! jobs/{job_id}/merged/{page}.corrected.json  human correction
//! jobs/{job_id}/merged/{page}.audit.jsonl     one line per saved correction
//! jobs/{job_id}/eval/{page}.json         score against the reference
//! jobs/{job_id}/exports/                 unified CSV / TEI files
//! jobs/{job_id}/ledger.jsonl             usage records
//! ```
//!
//! Every stage writes its artifacts before the manifest records the new
//! state. A crash in between leaves the page in its previous state, and
//! re-running the stage reuses stored replies because request ids are
//! content hashes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::entry::{
    csv_to_entries, entries_to_csv, parse_entry_payload, validate_entry, DictionaryEntry, EntryProvenance, SchemaId,
};
use crate::eval::{aggregate, score_page, CorpusReport, EvalError, EvalReport, MethodResult, PageContent};
use crate::fsutil::{write_atomic, write_atomic_with};
use crate::gateway::{
    estimate_cost, Gateway, GatewayError, ModelParams, PriceTable, PromptLibrary, Provider, RetryPolicy, UsageLedger,
    VisionRequest,
};
use crate::merger::{
    decisions_to_jsonl, llm_merge, merge_fragments, Fragment, FragmentSet, MergeError, DEFAULT_THRESHOLD,
};
use crate::tei::{
    dictionary_to_tei_entry, parse_tei_fragment, parse_tei_reply, serialize_tei, serialize_tei_with_comment,
    tei_entry_to_dictionary, TeiDocument, TeiEntry,
};
use crate::tiler::{crop, plan_tiles, PageImage, TileError, TilePlan, TilingSpec};

pub const DEFAULT_RETRY_LIMIT: u32 = 3;

/// Environment variable naming a crash point, used by the crash-safety
/// tests. The process aborts when it reaches that point.
pub const CRASH_ENV: &str = "FRAKTUR_CRASH_AT";

pub const CRASH_POINTS: [&str; 6] = [
    "tiling:after-tiles",
    "recognizing:after-mark",
    "recognizing:after-first-response",
    "recognizing:after-responses",
    "merging:after-output",
    "manifest:before-rename",
];

fn crash_point(name: &str) {
    if std::env::var(CRASH_ENV).is_ok_and(|v| v == name) {
        eprintln!("crash point {name} reached, aborting");
        std::process::abort();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryViolation {
    pub index: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unreadable scan {file}: {message}")]
    UnreadableScan { file: String, message: String },
    #[error("job {0:?} already exists")]
    JobExists(String),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
    #[error("job {job:?} has no page {page}")]
    UnknownPage { job: String, page: u32 },
    #[error("no tile {0:?}")]
    UnknownTile(String),
    #[error("page {page} is {state}; cannot {action}")]
    IllegalTransition { page: u32, state: String, action: String },
    #[error("page {page} reached the retry limit of {limit}")]
    RetryLimit { page: u32, limit: u32 },
    #[error("{} validation failure(s)", .0.len())]
    Validation(Vec<EntryViolation>),
    #[error("no page is ready for export")]
    NothingToExport,
    #[error("no evaluated pages")]
    NoReports,
    #[error("tiling: {0}")]
    Tile(#[from] TileError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("store: {0}")]
    Store(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl JobError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            JobError::InvalidConfig(_) => "invalid_config",
            JobError::UnreadableScan { .. } => "unreadable_scan",
            JobError::JobExists(_) => "job_exists",
            JobError::UnknownJob(_) => "unknown_job",
            JobError::UnknownPage { .. } => "unknown_page",
            JobError::UnknownTile(_) => "unknown_tile",
            JobError::IllegalTransition { .. } => "illegal_transition",
            JobError::RetryLimit { .. } => "retry_limit",
            JobError::Validation(_) => "validation_failed",
            JobError::NothingToExport => "nothing_to_export",
            JobError::NoReports => "no_reports",
            JobError::Tile(_) => "tiling_error",
            JobError::Gateway(GatewayError::Auth(_)) => "auth_error",
            JobError::Gateway(_) => "gateway_error",
            JobError::Merge(_) => "merge_error",
            JobError::Eval(_) => "eval_error",
            JobError::Store(_) => "store_error",
            JobError::Io(_) => "io_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    Deterministic,
    /// Ask a model to merge TEI fragments, falling back to the deterministic
    /// merge on unusable replies.
    Llm,
}

/// Job configuration. Every key is optional in the TOML form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub schema: SchemaId,
    /// Written into entry provenance, e.g. `hupel`.
    pub source_id: String,
    pub tiling: TilingSpec,
    pub model: ModelParams,
    /// Recognition prompt; defaults to the built-in prompt for the schema.
    pub prompt_asset: Option<String>,
    pub merge: MergeMode,
    pub merge_asset: String,
    pub merge_threshold: f64,
    pub retry_limit: u32,
    pub max_in_flight: usize,
    /// Directory with `{page}.xml` (TEI) or `{page}.csv` / `{page}.json`
    /// (nine-field) ground truth; pages with a reference are scored after merging.
    pub reference_dir: Option<PathBuf>,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            schema: SchemaId::TeiSubset,
            source_id: "source".into(),
            tiling: TilingSpec::default(),
            model: ModelParams::default(),
            prompt_asset: None,
            merge: MergeMode::Deterministic,
            merge_asset: "tei_merge".into(),
            merge_threshold: DEFAULT_THRESHOLD,
            retry_limit: DEFAULT_RETRY_LIMIT,
            max_in_flight: crate::gateway::DEFAULT_MAX_IN_FLIGHT,
            reference_dir: None,
        }
    }
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<Self, JobError> {
        let config: JobConfig = toml::from_str(text).map_err(|e| JobError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), JobError> {
        let bad = |m: String| Err(JobError::InvalidConfig(m));
        self.tiling.validate().map_err(|e| JobError::InvalidConfig(e.to_string()))?;
        self.model.validate().map_err(|e| JobError::InvalidConfig(e.to_string()))?;
        if self.source_id.trim().is_empty() {
            return bad("source_id must not be empty".into());
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return bad(format!("merge_threshold {} outside (0, 1]", self.merge_threshold));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.merge == MergeMode::Llm && self.schema != SchemaId::TeiSubset {
            return bad("model merging is only available for the TEI schema".into());
        }
        Ok(())
    }

    pub fn recognition_asset(&self) -> &str {
        match (&self.prompt_asset, self.schema) {
            (Some(a), _) => a,
            (None, SchemaId::NineField) => "helle_nine_field",
            (None, SchemaId::TeiSubset) => "hupel_tei",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tiling,
    Recognizing,
    Merging,
}

/// Where a page stands. `Recognizing` means recognition has started but its
/// results are not all stored; `Merging` means all tile replies are stored
/// and the merge is pending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PageState {
    Pending,
    Tiled,
    Recognizing,
    Merging,
    Recognized,
    InReview,
    Approved,
    Failed {
        stage: Stage,
        /// Machine-readable error code, see [`JobError::code`].
        #[serde(default)]
        code: String,
        error: String,
        retry_count: u32,
    },
}

impl PageState {
    pub fn name(&self) -> &'static str {
        match self {
            PageState::Pending => "pending",
            PageState::Tiled => "tiled",
            PageState::Recognizing => "recognizing",
            PageState::Merging => "merging",
            PageState::Recognized => "recognized",
            PageState::InReview => "in_review",
            PageState::Approved => "approved",
            PageState::Failed { .. } => "failed",
        }
    }

    /// Has merged content that can be reviewed and exported.
    pub fn has_content(&self) -> bool {
        matches!(self, PageState::Recognized | PageState::InReview | PageState::Approved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    /// 1-based position in the job.
    pub number: u32,
    /// Scan file stem; names all page artifacts.
    pub page_id: String,
    pub scan: String,
    pub state: PageState,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub config: JobConfig,
    pub pages: Vec<PageRecord>,
    pub created_at: String,
    pub updated_at: String,
}

impl Job {
    pub fn page(&self, number: u32) -> Result<&PageRecord, JobError> {
        self.pages
            .iter()
            .find(|p| p.number == number)
            .ok_or_else(|| JobError::UnknownPage { job: self.job_id.clone(), page: number })
    }

    fn page_mut(&mut self, number: u32) -> Result<&mut PageRecord, JobError> {
        let job = self.job_id.clone();
        self.pages.iter_mut().find(|p| p.number == number).ok_or(JobError::UnknownPage { job, page: number })
    }

    pub fn summary(&self) -> JobSummary {
        let mut states = BTreeMap::new();
        for p in &self.pages {
            *states.entry(p.state.name().to_string()).or_insert(0) += 1;
        }
        JobSummary {
            job_id: self.job_id.clone(),
            schema: self.config.schema,
            page_count: self.pages.len(),
            states,
            created_at: self.created_at.clone(),
            updated_at: self.updated_at.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: String,
    pub schema: SchemaId,
    pub page_count: usize,
    /// Number of pages per state name.
    pub states: BTreeMap<String, usize>,
    pub created_at: String,
    pub updated_at: String,
}

/// One submitted page image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanInput {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

impl ScanInput {
    pub fn from_path(path: &Path) -> Result<Self, JobError> {
        let file_name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| JobError::UnreadableScan {
                file: path.display().to_string(),
                message: "no file name".into(),
            })?
            .to_string();
        let bytes = std::fs::read(path)
            .map_err(|e| JobError::UnreadableScan { file: path.display().to_string(), message: e.to_string() })?;
        Ok(Self { file_name, bytes })
    }
}

/// What stages need besides the store: a provider and prompts.
#[derive(Clone)]
pub struct Runtime {
    pub provider: Arc<dyn Provider>,
    pub prompts: PromptLibrary,
    pub retry: RetryPolicy,
    /// Merge mode for this run instead of the job's.
    pub merge_override: Option<MergeMode>,
}

impl Runtime {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self { provider, prompts: PromptLibrary::builtin(), retry: RetryPolicy::default(), merge_override: None }
    }

    pub fn with_merge_override(mut self, mode: Option<MergeMode>) -> Self {
        self.merge_override = mode;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime").field("provider", &self.provider.id()).field("retry", &self.retry).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Tei,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "tei" | "xml" => Ok(ExportFormat::Tei),
            other => Err(format!("unknown export format {other:?} (csv, tei)")),
        }
    }
}

/// Page state plus everything the review screen shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageView {
    pub number: u32,
    pub page_id: String,
    pub state: PageState,
    pub warnings: Vec<String>,
    pub corrected: bool,
    /// Corrected content when present, else the merged content.
    pub content: Option<PageContent>,
    /// Tile file names, relative to the job's `tiles/` directory.
    pub tiles: Vec<String>,
    pub plan: Option<TilePlan>,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TileRequest {
    tile: String,
    request_id: String,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    at: &'a str,
    action: &'a str,
    entries: usize,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn valid_job_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, JobError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| JobError::Store(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JobError> {
    let mut text = serde_json::to_string_pretty(value).expect("store values serialise");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Loads a reference page for `page_id` from `dir`, if one exists.
pub fn load_reference(dir: &Path, page_id: &str, schema: SchemaId) -> Result<Option<PageContent>, JobError> {
    let bad = |p: &Path, e: String| JobError::Store(format!("reference {}: {e}", p.display()));
    match schema {
        SchemaId::TeiSubset => {
            let p = dir.join(format!("{page_id}.xml"));
            if !p.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&p)?;
            let doc = parse_tei_fragment(&text).map_err(|e| bad(&p, e.to_string()))?;
            Ok(Some(PageContent::Tei(doc)))
        }
        SchemaId::NineField => {
            let csv = dir.join(format!("{page_id}.csv"));
            if csv.exists() {
                let entries = csv_to_entries(&std::fs::read_to_string(&csv)?).map_err(|e| bad(&csv, e.to_string()))?;
                return Ok(Some(PageContent::NineField(entries)));
            }
            let json = dir.join(format!("{page_id}.json"));
            if json.exists() {
                let parsed = parse_entry_payload(&std::fs::read_to_string(&json)?, SchemaId::NineField)
                    .map_err(|e| bad(&json, e.to_string()))?;
                return Ok(Some(PageContent::NineField(parsed.entries)));
            }
            Ok(None)
        }
    }
}

/// Checks a human correction. The body is a JSON array of entries in the
/// job's schema: nine-field objects or TEI entry objects.
pub fn validate_correction(schema: SchemaId, body: &Value) -> Result<PageContent, JobError> {
    let fail = |index: usize, field: &str, message: String| {
        JobError::Validation(vec![EntryViolation { index, field: field.into(), message }])
    };
    let Value::Array(items) = body else {
        return Err(fail(0, "entries", "body must be a JSON array of entries".into()));
    };
    let mut violations = Vec::new();
    match schema {
        SchemaId::NineField => {
            let mut entries = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match serde_json::from_value::<DictionaryEntry>(item.clone()) {
                    Ok(e) => {
                        violations.extend(validate_entry(&e).into_iter().map(|v| EntryViolation {
                            index: i,
                            field: v.field.clone(),
                            message: format!("{:?}", v.rule),
                        }));
                        entries.push(e);
                    }
                    Err(e) => {
                        violations.push(EntryViolation { index: i, field: "entry".into(), message: e.to_string() })
                    }
                }
            }
            if violations.is_empty() {
                Ok(PageContent::NineField(entries))
            } else {
                Err(JobError::Validation(violations))
            }
        }
        SchemaId::TeiSubset => {
            let mut entries = Vec::with_capacity(items.len());
            let mut ids = HashSet::new();
            for (i, item) in items.iter().enumerate() {
                match serde_json::from_value::<TeiEntry>(item.clone()) {
                    Ok(e) => {
                        if e.orth.trim().is_empty() {
                            violations.push(EntryViolation {
                                index: i,
                                field: "orth".into(),
                                message: "empty headword".into(),
                            });
                        }
                        if !ids.insert(e.id.clone()) {
                            violations.push(EntryViolation {
                                index: i,
                                field: "id".into(),
                                message: format!("duplicate id {:?}", e.id),
                            });
                        }
                        entries.push(e);
                    }
                    Err(e) => {
                        violations.push(EntryViolation { index: i, field: "entry".into(), message: e.to_string() })
                    }
                }
            }
            let doc = TeiDocument::new(entries);
            if violations.is_empty() {
                if let Err(e) = doc.validate() {
                    violations.push(EntryViolation { index: 0, field: "document".into(), message: e.to_string() });
                }
            }
            if violations.is_empty() {
                Ok(PageContent::Tei(doc))
            } else {
                Err(JobError::Validation(violations))
            }
        }
    }
}

/// Root of all jobs. Mutations of one job are serialised; distinct jobs
/// proceed independently.
#[derive(Debug)]
pub struct JobStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl JobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, JobError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("jobs"))?;
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, job_id: &str) -> PathBuf {
        self.root.join("jobs").join(job_id)
    }

    fn lock(&self, job_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table").entry(job_id.to_string()).or_default().clone()
    }

    fn manifest_path(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join("manifest.json")
    }

    pub fn load(&self, job_id: &str) -> Result<Job, JobError> {
        if !valid_job_id(job_id) {
            return Err(JobError::UnknownJob(job_id.into()));
        }
        let path = self.manifest_path(job_id);
        if !path.exists() {
            return Err(JobError::UnknownJob(job_id.into()));
        }
        read_json(&path)
    }

    fn save(&self, job: &mut Job) -> Result<(), JobError> {
        job.updated_at = now();
        let mut text = serde_json::to_string_pretty(job).expect("manifest serialises");
        text.push('\n');
        write_atomic_with(&self.manifest_path(&job.job_id), text.as_bytes(), || crash_point("manifest:before-rename"))?;
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<JobSummary>, JobError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(self.root.join("jobs"))? {
            let entry = entry?;
            let Some(id) = entry.file_name().to_str().map(str::to_string) else { continue };
            if entry.path().join("manifest.json").exists() {
                out.push(self.load(&id)?.summary());
            }
        }
        out.sort_by(|a, b| a.job_id.cmp(&b.job_id));
        Ok(out)
    }

    /// Creates a job with all pages pending. Without an id, one is derived
    /// from the creation time and the scan names.
    pub fn create_job(&self, job_id: Option<&str>, scans: Vec<ScanInput>, config: JobConfig) -> Result<Job, JobError> {
        config.validate()?;
        if scans.is_empty() {
            return Err(JobError::InvalidConfig("a job needs at least one page".into()));
        }
        let mut stems = HashSet::new();
        for s in &scans {
            let path = Path::new(&s.file_name);
            let plain = path.file_name().and_then(|n| n.to_str()) == Some(s.file_name.as_str());
            let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or("");
            if !plain || stem.is_empty() || stem.starts_with('.') {
                return Err(JobError::InvalidConfig(format!("invalid page file name {:?}", s.file_name)));
            }
            if !stems.insert(stem.to_string()) {
                return Err(JobError::InvalidConfig(format!("duplicate page file name {:?}", s.file_name)));
            }
        }
        for s in &scans {
            image::load_from_memory(&s.bytes)
                .map_err(|e| JobError::UnreadableScan { file: s.file_name.clone(), message: e.to_string() })?;
        }
        let created_at = now();
        let job_id = match job_id {
            Some(id) if valid_job_id(id) => id.to_string(),
            Some(id) => {
                return Err(JobError::InvalidConfig(format!("invalid job id {id:?} (letters, digits, - and _)")))
            }
            None => {
                let mut h = Sha256::new();
                h.update(created_at.as_bytes());
                for s in &scans {
                    h.update(s.file_name.as_bytes());
                }
                format!("job-{}", &hex::encode(h.finalize())[..10])
            }
        };
        let lock = self.lock(&job_id);
        let _guard = lock.lock().expect("job lock");
        let dir = self.job_dir(&job_id);
        if dir.join("manifest.json").exists() {
            return Err(JobError::JobExists(job_id));
        }
        for sub in ["scans", "tiles", "raw", "merged", "eval", "exports"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut pages = Vec::with_capacity(scans.len());
        for (i, s) in scans.iter().enumerate() {
            write_atomic(&dir.join("scans").join(&s.file_name), &s.bytes)?;
            let page_id = Path::new(&s.file_name).file_stem().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            pages.push(PageRecord {
                number: i as u32 + 1,
                page_id,
                scan: s.file_name.clone(),
                state: PageState::Pending,
                warnings: Vec::new(),
                corrected: false,
            });
        }
        let mut job = Job { job_id, config, pages, created_at: created_at.clone(), updated_at: created_at };
        self.save(&mut job)?;
        Ok(job)
    }

    /// Replaces the model parameters, for retrying failed pages with a
    /// different model. The rest of the config is fixed at creation.
    pub fn set_model_params(&self, job_id: &str, params: ModelParams) -> Result<Job, JobError> {
        params.validate().map_err(|e| JobError::InvalidConfig(e.to_string()))?;
        let lock = self.lock(job_id);
        let _guard = lock.lock().expect("job lock");
        let mut job = self.load(job_id)?;
        job.config.model = params;
        self.save(&mut job)?;
        Ok(job)
    }

    fn gateway(&self, job: &Job, rt: &Runtime) -> Result<Gateway, JobError> {
        let dir = self.job_dir(&job.job_id);
        Ok(Gateway::new(rt.provider.clone())
            .with_store(dir.join("raw"))
            .with_ledger(UsageLedger::open(dir.join("ledger.jsonl"))?)
            .with_retry(rt.retry)
            .with_max_in_flight(job.config.max_in_flight))
    }

    /// Runs the next stage of one page and returns its new state. A stage
    /// error leaves the page `Failed` and is reported through the returned
    /// state, not as an `Err`. Recognized and in-review pages are left as
    /// they are.
    pub fn advance(&self, job_id: &str, page: u32, rt: &Runtime) -> Result<PageState, JobError> {
        let lock = self.lock(job_id);
        let _guard = lock.lock().expect("job lock");
        let mut job = self.load(job_id)?;
        let state = job.page(page)?.state.clone();
        let stage = match state {
            PageState::Pending => Stage::Tiling,
            PageState::Tiled | PageState::Recognizing => Stage::Recognizing,
            PageState::Merging => Stage::Merging,
            PageState::Recognized | PageState::InReview => return Ok(state),
            PageState::Approved | PageState::Failed { .. } => {
                return Err(JobError::IllegalTransition { page, state: state.name().into(), action: "advance".into() })
            }
        };
        self.run_stage(&mut job, page, stage, 0, rt)
    }

    /// Advances a page until it has content, fails, or is already past
    /// recognition.
    pub fn advance_to_recognized(&self, job_id: &str, page: u32, rt: &Runtime) -> Result<PageState, JobError> {
        loop {
            let before = self.load(job_id)?.page(page)?.state.clone();
            if before.has_content() || matches!(before, PageState::Failed { .. }) {
                return Ok(before);
            }
            let after = self.advance(job_id, page, rt)?;
            if after.has_content() || matches!(after, PageState::Failed { .. }) {
                return Ok(after);
            }
        }
    }

    /// Re-runs the failed stage of a page.
    pub fn retry(&self, job_id: &str, page: u32, rt: &Runtime) -> Result<PageState, JobError> {
        let lock = self.lock(job_id);
        let _guard = lock.lock().expect("job lock");
        let mut job = self.load(job_id)?;
        let state = job.page(page)?.state.clone();
        let PageState::Failed { stage, retry_count, .. } = state else {
            return Err(JobError::IllegalTransition { page, state: state.name().into(), action: "retry".into() });
        };
        if retry_count >= job.config.retry_limit {
            return Err(JobError::RetryLimit { page, limit: job.config.retry_limit });
        }
        self.run_stage(&mut job, page, stage, retry_count + 1, rt)
    }

    fn run_stage(
        &self,
        job: &mut Job,
        page: u32,
        stage: Stage,
        retry_count: u32,
        rt: &Runtime,
    ) -> Result<PageState, JobError> {
        let mut warnings = Vec::new();
        let result = match stage {
            Stage::Tiling => self.tile_page(job, page),
            Stage::Recognizing => self.recognize_page(job, page, rt, &mut warnings),
            Stage::Merging => self.merge_page(job, page, rt, &mut warnings),
        };
        let next = match result {
            Ok(next) => next,
            Err(e) => PageState::Failed { stage, code: e.code().into(), error: e.to_string(), retry_count },
        };
        let record = job.page_mut(page)?;
        record.state = next.clone();
        record.warnings.extend(warnings);
        self.save(job)?;
        Ok(next)
    }

    fn tile_page(&self, job: &Job, page: u32) -> Result<PageState, JobError> {
        let rec = job.page(page)?;
        let dir = self.job_dir(&job.job_id);
        let image = PageImage::open(&rec.page_id, dir.join("scans").join(&rec.scan))?;
        let plan = plan_tiles(&image, &job.config.tiling)?;
        for tile in &plan.tiles {
            let raster = crop(&image, tile)?;
            write_atomic(&dir.join("tiles").join(format!("{}.png", tile.file_stem(&rec.page_id))), &raster.png)?;
        }
        write_json(&dir.join("tiles").join(format!("{}.plan.json", rec.page_id)), &plan)?;
        crash_point("tiling:after-tiles");
        Ok(PageState::Tiled)
    }

    fn recognize_page(
        &self,
        job: &mut Job,
        page: u32,
        rt: &Runtime,
        warnings: &mut Vec<String>,
    ) -> Result<PageState, JobError> {
        if job.page(page)?.state != PageState::Recognizing {
            job.page_mut(page)?.state = PageState::Recognizing;
            self.save(job)?;
        }
        crash_point("recognizing:after-mark");
        let rec = job.page(page)?.clone();
        let dir = self.job_dir(&job.job_id);
        let plan: TilePlan = read_json(&dir.join("tiles").join(format!("{}.plan.json", rec.page_id)))?;
        let prompt = rt.prompts.get(job.config.recognition_asset())?;
        let mut requests = Vec::with_capacity(plan.tiles.len());
        let mut stems = Vec::with_capacity(plan.tiles.len());
        for tile in &plan.tiles {
            let stem = tile.file_stem(&rec.page_id);
            let png = std::fs::read(dir.join("tiles").join(format!("{stem}.png")))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            requests.push(VisionRequest::new(Some(b64), "image/png", prompt.clone(), job.config.model.clone())?);
            stems.push(stem);
        }
        let gateway = self.gateway(job, rt)?;
        let done = AtomicUsize::new(0);
        let results = gateway.submit_all_with(&requests, |_, r| {
            if r.is_ok() && done.fetch_add(1, Ordering::SeqCst) == 0 {
                crash_point("recognizing:after-first-response");
            }
        });
        let mut index = Vec::with_capacity(requests.len());
        for ((stem, req), result) in stems.into_iter().zip(&requests).zip(results) {
            let response = result?;
            if response.outcome() == crate::gateway::Outcome::Refusal {
                warnings.push(format!("tile {stem}: model refused"));
            }
            index.push(TileRequest { tile: stem, request_id: req.request_id.clone() });
        }
        write_json(&dir.join("tiles").join(format!("{}.requests.json", rec.page_id)), &index)?;
        crash_point("recognizing:after-responses");
        Ok(PageState::Merging)
    }

    fn merge_page(
        &self,
        job: &Job,
        page: u32,
        rt: &Runtime,
        warnings: &mut Vec<String>,
    ) -> Result<PageState, JobError> {
        let rec = job.page(page)?;
        let dir = self.job_dir(&job.job_id);
        let plan: TilePlan = read_json(&dir.join("tiles").join(format!("{}.plan.json", rec.page_id)))?;
        let index: Vec<TileRequest> = read_json(&dir.join("tiles").join(format!("{}.requests.json", rec.page_id)))?;
        if index.len() != plan.tiles.len() {
            return Err(JobError::Store(format!("{} tile requests for {} tiles", index.len(), plan.tiles.len())));
        }
        let gateway = self.gateway(job, rt)?;
        let mut bodies = Vec::with_capacity(index.len());
        for tr in &index {
            let response = gateway.stored(&tr.request_id)?.ok_or_else(|| {
                JobError::Store(format!("missing stored reply {} for tile {}", tr.request_id, tr.tile))
            })?;
            bodies.push(response.into_body().ok());
        }
        let cfg = &job.config;
        let (content, decisions) = match cfg.schema {
            SchemaId::TeiSubset => {
                let mut fragments = Vec::with_capacity(plan.tiles.len());
                for ((tile, tr), body) in plan.tiles.iter().zip(&index).zip(&bodies) {
                    let doc = match body.as_deref().map(parse_tei_reply) {
                        Some(Ok(doc)) => doc,
                        Some(Err(e)) => {
                            warnings.push(format!("tile {}: {e}", tr.tile));
                            TeiDocument::default()
                        }
                        None => TeiDocument::default(),
                    };
                    fragments.push(Fragment::from_document(*tile, doc));
                }
                let set = FragmentSet::new(plan.clone(), fragments);
                match rt.merge_override.unwrap_or(cfg.merge) {
                    MergeMode::Deterministic => {
                        let merged = merge_fragments(&set, cfg.merge_threshold)?;
                        (PageContent::Tei(merged.to_document()), merged.decisions)
                    }
                    MergeMode::Llm => {
                        let out =
                            llm_merge(&set, &gateway, &rt.prompts, &cfg.merge_asset, &cfg.model, cfg.merge_threshold)?;
                        if let Some(reason) = out.fallback {
                            warnings.push(format!("model merge unusable, merged deterministically: {reason}"));
                        }
                        (PageContent::Tei(out.document), out.decisions)
                    }
                }
            }
            SchemaId::NineField => {
                let mut fragments = Vec::with_capacity(plan.tiles.len());
                for ((tile, tr), body) in plan.tiles.iter().zip(&index).zip(&bodies) {
                    let mut entries = match body.as_deref().map(|b| parse_entry_payload(b, SchemaId::NineField)) {
                        Some(Ok(p)) => {
                            warnings.extend(p.warnings.into_iter().map(|w| format!("tile {}: {w}", tr.tile)));
                            p.entries
                        }
                        Some(Err(e)) => {
                            warnings.push(format!("tile {}: {e}", tr.tile));
                            Vec::new()
                        }
                        None => Vec::new(),
                    };
                    for e in &mut entries {
                        e.provenance.source_id = cfg.source_id.clone();
                        e.provenance.page = rec.number;
                    }
                    fragments.push(Fragment::new(*tile, entries));
                }
                if rt.merge_override == Some(MergeMode::Llm) {
                    warnings.push("model merging is only available for TEI; merged deterministically".into());
                }
                let merged = merge_fragments(&FragmentSet::new(plan.clone(), fragments), cfg.merge_threshold)?;
                (PageContent::NineField(merged.entries), merged.decisions)
            }
        };
        let merged_dir = dir.join("merged");
        write_json(&merged_dir.join(format!("{}.json", rec.page_id)), &content)?;
        if let PageContent::Tei(doc) = &content {
            write_atomic(&merged_dir.join(format!("{}.xml", rec.page_id)), serialize_tei(doc).as_bytes())?;
        }
        write_atomic(
            &merged_dir.join(format!("{}.decisions.jsonl", rec.page_id)),
            decisions_to_jsonl(&decisions).as_bytes(),
        )?;
        crash_point("merging:after-output");
        if let Some(ref_dir) = &cfg.reference_dir {
            match load_reference(ref_dir, &rec.page_id, cfg.schema) {
                Ok(Some(reference)) => match score_page(&rec.page_id, &content, &reference) {
                    Ok(report) => write_json(&dir.join("eval").join(format!("{}.json", rec.page_id)), &report)?,
                    Err(e) => warnings.push(format!("evaluation skipped: {e}")),
                },
                Ok(None) => {}
                Err(e) => warnings.push(format!("evaluation skipped: {e}")),
            }
        }
        Ok(PageState::Recognized)
    }

    /// Merged content of a page as produced by the pipeline.
    pub fn merged_content(&self, job_id: &str, page_id: &str) -> Result<Option<PageContent>, JobError> {
        let p = self.job_dir(job_id).join("merged").join(format!("{page_id}.json"));
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Corrected content if a correction was saved, else merged content.
    pub fn current_content(&self, job_id: &str, page_id: &str) -> Result<Option<PageContent>, JobError> {
        let p = self.job_dir(job_id).join("merged").join(format!("{page_id}.corrected.json"));
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            self.merged_content(job_id, page_id)
        }
    }

    pub fn page_view(&self, job_id: &str, page: u32) -> Result<PageView, JobError> {
        let job = self.load(job_id)?;
        let rec = job.page(page)?;
        let dir = self.job_dir(job_id);
        let plan_path = dir.join("tiles").join(format!("{}.plan.json", rec.page_id));
        let plan: Option<TilePlan> = if plan_path.exists() { Some(read_json(&plan_path)?) } else { None };
        let tiles = plan
            .as_ref()
            .map(|p| p.tiles.iter().map(|t| format!("{}.png", t.file_stem(&rec.page_id))).collect())
            .unwrap_or_default();
        let eval_path = dir.join("eval").join(format!("{}.json", rec.page_id));
        Ok(PageView {
            number: rec.number,
            page_id: rec.page_id.clone(),
            state: rec.state.clone(),
            warnings: rec.warnings.clone(),
            corrected: rec.corrected,
            content: self.current_content(job_id, &rec.page_id)?,
            tiles,
            plan,
            eval: if eval_path.exists() { Some(read_json(&eval_path)?) } else { None },
        })
    }

    /// Path of a tile raster, if the name belongs to the job.
    pub fn tile_path(&self, job_id: &str, name: &str) -> Result<PathBuf, JobError> {
        self.load(job_id)?;
        let ok = name.ends_with(".png") && !name.contains(['/', '\\']) && !name.starts_with('.');
        let path = self.job_dir(job_id).join("tiles").join(name);
        if !ok || !path.is_file() {
            return Err(JobError::UnknownTile(name.into()));
        }
        Ok(path)
    }

    /// Replaces the whole entry sequence of a page with a human correction.
    /// The page moves to `InReview`.
    pub fn save_corrections(&self, job_id: &str, page: u32, body: &Value) -> Result<PageState, JobError> {
        let lock = self.lock(job_id);
        let _guard = lock.lock().expect("job lock");
        let mut job = self.load(job_id)?;
        let state = job.page(page)?.state.clone();
        if !matches!(state, PageState::Recognized | PageState::InReview) {
            return Err(JobError::IllegalTransition { page, state: state.name().into(), action: "correct".into() });
        }
        let mut content = validate_correction(job.config.schema, body)?;
        let page_id = job.page(page)?.page_id.clone();
        if let PageContent::NineField(entries) = &mut content {
            for (i, e) in entries.iter_mut().enumerate() {
                e.provenance.source_id = job.config.source_id.clone();
                e.provenance.page = page;
                e.provenance.order_on_page = i as u32;
            }
        }
        let merged_dir = self.job_dir(job_id).join("merged");
        write_json(&merged_dir.join(format!("{page_id}.corrected.json")), &content)?;
        self.audit(&merged_dir.join(format!("{page_id}.audit.jsonl")), "correct", content.len())?;
        let rec = job.page_mut(page)?;
        rec.state = PageState::InReview;
        rec.corrected = true;
        self.save(&mut job)?;
        Ok(PageState::InReview)
    }

    fn audit(&self, path: &Path, action: &str, entries: usize) -> Result<(), JobError> {
        let line = serde_json::to_string(&AuditLine { at: &now(), action, entries }).expect("audit serialises");
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(format!("{line}\n").as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn approve(&self, job_id: &str, page: u32) -> Result<PageState, JobError> {
        let lock = self.lock(job_id);
        let _guard = lock.lock().expect("job lock");
        let mut job = self.load(job_id)?;
        let state = job.page(page)?.state.clone();
        if !matches!(state, PageState::Recognized | PageState::InReview) {
            return Err(JobError::IllegalTransition { page, state: state.name().into(), action: "approve".into() });
        }
        let page_id = job.page(page)?.page_id.clone();
        let entries = self.current_content(job_id, &page_id)?.map_or(0, |c| c.len());
        self.audit(&self.job_dir(job_id).join("merged").join(format!("{page_id}.audit.jsonl")), "approve", entries)?;
        job.page_mut(page)?.state = PageState::Approved;
        self.save(&mut job)?;
        Ok(PageState::Approved)
    }

    /// Writes one file with all exportable pages in page order and returns
    /// its path. Approved and in-review pages contribute their corrected
    /// content. Pages without content are listed in a banner at the top.
    pub fn export(&self, job_id: &str, format: ExportFormat) -> Result<PathBuf, JobError> {
        let job = self.load(job_id)?;
        let (text, _) = self.export_text(&job, format)?;
        let name = match format {
            ExportFormat::Csv => format!("{job_id}.csv"),
            ExportFormat::Tei => format!("{job_id}.tei.xml"),
        };
        let path = self.job_dir(job_id).join("exports").join(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// The export text and the numbers of the included pages.
    pub fn export_text(&self, job: &Job, format: ExportFormat) -> Result<(String, Vec<u32>), JobError> {
        let mut included = Vec::new();
        let mut excluded = Vec::new();
        let mut contents = Vec::new();
        for rec in &job.pages {
            match (rec.state.has_content(), self.current_content(&job.job_id, &rec.page_id)?) {
                (true, Some(c)) => {
                    included.push(rec.number);
                    contents.push((rec, c));
                }
                _ => excluded.push(format!("{} ({})", rec.number, rec.state.name())),
            }
        }
        if included.is_empty() {
            return Err(JobError::NothingToExport);
        }
        let banner = if excluded.is_empty() {
            format!("coverage: {} of {} pages", included.len(), job.pages.len())
        } else {
            format!(
                "coverage: {} of {} pages; excluded pages: {}",
                included.len(),
                job.pages.len(),
                excluded.join(", ")
            )
        };
        let text = match format {
            ExportFormat::Csv => {
                let mut entries = Vec::new();
                for (rec, content) in &contents {
                    match content {
                        PageContent::NineField(es) => entries.extend(es.iter().cloned()),
                        PageContent::Tei(doc) => entries.extend(doc.entries.iter().enumerate().map(|(i, e)| {
                            tei_entry_to_dictionary(
                                e,
                                EntryProvenance {
                                    source_id: job.config.source_id.clone(),
                                    page: rec.number,
                                    order_on_page: i as u32,
                                    ..Default::default()
                                },
                            )
                        })),
                    }
                }
                format!("# {banner}\r\n{}", entries_to_csv(&entries))
            }
            ExportFormat::Tei => {
                let mut out = TeiDocument::default();
                let mut ids = HashSet::new();
                for (rec, content) in &contents {
                    let doc = match content {
                        PageContent::Tei(d) => d.clone(),
                        PageContent::NineField(es) => TeiDocument::new(
                            es.iter()
                                .enumerate()
                                .map(|(i, e)| dictionary_to_tei_entry(e, format!("p{}-e{}", rec.number, i + 1)))
                                .collect(),
                        ),
                    };
                    // senses continuing the last article of the previous page
                    match out.entries.last_mut() {
                        Some(last) => last.senses.extend(doc.leading),
                        None => out.leading.extend(doc.leading),
                    }
                    for mut e in doc.entries {
                        if !ids.insert(e.id.clone()) {
                            let base = format!("{}-p{}", e.id, rec.number);
                            let mut id = base.clone();
                            let mut n = 2;
                            while !ids.insert(id.clone()) {
                                id = format!("{base}-{n}");
                                n += 1;
                            }
                            e.id = id;
                        }
                        out.entries.push(e);
                    }
                }
                serialize_tei_with_comment(&out, Some(&banner))
            }
        };
        Ok((text, included))
    }

    /// Scores every page with content against `{reference_dir}/{page}.*`,
    /// using the merged (uncorrected) output. Pages without a reference are
    /// skipped.
    pub fn evaluate(&self, job_id: &str, reference_dir: &Path) -> Result<Vec<EvalReport>, JobError> {
        let job = self.load(job_id)?;
        let mut reports = Vec::new();
        for rec in &job.pages {
            if !rec.state.has_content() {
                continue;
            }
            let (Some(hyp), Some(reference)) = (
                self.merged_content(job_id, &rec.page_id)?,
                load_reference(reference_dir, &rec.page_id, job.config.schema)?,
            ) else {
                continue;
            };
            let report = score_page(&rec.page_id, &hyp, &reference)?;
            write_json(&self.job_dir(job_id).join("eval").join(format!("{}.json", rec.page_id)), &report)?;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Corpus report over all scored pages, with one method row for the
    /// job's model. Cost is 0 unless a price table is given.
    pub fn report(&self, job_id: &str, prices: Option<&PriceTable>) -> Result<CorpusReport, JobError> {
        let job = self.load(job_id)?;
        let dir = self.job_dir(job_id);
        let mut reports = Vec::new();
        for rec in &job.pages {
            let p = dir.join("eval").join(format!("{}.json", rec.page_id));
            if p.exists() {
                reports.push(read_json::<EvalReport>(&p)?);
            }
        }
        if reports.is_empty() {
            return Err(JobError::NoReports);
        }
        let ledger_path = dir.join("ledger.jsonl");
        let records = if ledger_path.exists() { crate::gateway::cost::read_ledger(&ledger_path)? } else { Vec::new() };
        let cost = match prices {
            Some(table) => estimate_cost(&records, table)?.as_f64(),
            None => 0.0,
        };
        let n = reports.len() as f64;
        let method = MethodResult {
            method: job.config.model.model_id.clone(),
            structural: reports.iter().map(|r| r.structural_similarity).sum::<f64>() / n,
            textual: reports.iter().map(|r| r.textual_similarity).sum::<f64>() / n,
            cost,
            input_tokens: records.iter().map(|r| r.input_tokens).sum(),
        };
        Ok(aggregate(&reports, &[method])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{image_key, MockProvider, MockStep};
    use crate::tei::Sense;
    use crate::tiler::TileMode;
    use image::{DynamicImage, Rgb, RgbImage};
    use std::time::Duration;

    fn scan(name: &str, shade: u8) -> ScanInput {
        let img = RgbImage::from_fn(200, 160, |x, y| {
            if (x / 7 + y / 5) % 3 == 0 {
                Rgb([shade, 20, 20])
            } else {
                Rgb([250, 250, 240])
            }
        });
        let mut bytes = Vec::new();
        DynamicImage::ImageRgb8(img).write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png).unwrap();
        ScanInput { file_name: name.into(), bytes }
    }

    fn config() -> JobConfig {
        JobConfig {
            tiling: TilingSpec { mode: TileMode::WholePage, ..Default::default() },
            source_id: "hupel".into(),
            ..Default::default()
        }
    }

    fn tei_reply(orths: &[(&str, &str)]) -> String {
        let doc = TeiDocument::new(
            orths
                .iter()
                .enumerate()
                .map(|(i, (o, q))| TeiEntry::new(format!("e{}", i + 1), *o).with_sense(Sense::translation(*q)))
                .collect(),
        );
        serialize_tei(&doc)
    }

    fn tile_key(store: &JobStore, job: &str, page_id: &str) -> String {
        let png = std::fs::read(store.job_dir(job).join("tiles").join(format!("{page_id}_00.png"))).unwrap();
        image_key(&base64::engine::general_purpose::STANDARD.encode(png))
    }

    fn fast(rt: Runtime) -> Runtime {
        rt.with_retry(RetryPolicy { base_delay: Duration::ZERO, factor: 2, max_retries: 0 })
    }

    #[test]
    fn create_job_checks_pages() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        assert!(matches!(store.create_job(Some("a"), vec![], config()), Err(JobError::InvalidConfig(_))));
        let err = store.create_job(Some("a"), vec![scan("p1.png", 1), scan("p1.png", 2)], config()).unwrap_err();
        assert!(matches!(&err, JobError::InvalidConfig(m) if m.contains("p1.png")), "{err}");
        let bad = ScanInput { file_name: "x.png".into(), bytes: b"not an image".to_vec() };
        assert!(matches!(store.create_job(Some("a"), vec![bad], config()), Err(JobError::UnreadableScan { .. })));
        let job = store.create_job(Some("a"), vec![scan("p1.png", 1), scan("p2.png", 2)], config()).unwrap();
        assert!(job.pages.iter().all(|p| p.state == PageState::Pending));
        assert!(matches!(store.create_job(Some("a"), vec![scan("p1.png", 1)], config()), Err(JobError::JobExists(_))));
        assert_eq!(store.list().unwrap()[0].states["pending"], 2);
    }

    #[test]
    fn happy_path_review_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        store.create_job(Some("j"), vec![scan("p1.png", 10), scan("p2.png", 90)], config()).unwrap();
        let idle = fast(Runtime::new(Arc::new(MockProvider::new())));
        assert_eq!(store.advance("j", 1, &idle).unwrap(), PageState::Tiled);
        assert_eq!(store.advance("j", 2, &idle).unwrap(), PageState::Tiled);
        let mock = Arc::new(
            MockProvider::new()
                .with_reply(tile_key(&store, "j", "p1"), tei_reply(&[("lahbutaminne", "Trennung"), ("aus", "ehrbar")]))
                .with_reply(tile_key(&store, "j", "p2"), tei_reply(&[("ärra", "weg")])),
        );
        let rt = fast(Runtime::new(mock.clone()));
        assert_eq!(store.advance_to_recognized("j", 1, &rt).unwrap(), PageState::Recognized);
        assert_eq!(store.advance("j", 1, &rt).unwrap(), PageState::Recognized);
        assert_eq!(mock.calls().len(), 1);

        let err = store.approve("j", 2).unwrap_err();
        assert!(matches!(err, JobError::IllegalTransition { .. }));

        let view = store.page_view("j", 1).unwrap();
        let Some(PageContent::Tei(doc)) = view.content else { panic!("no content") };
        let mut entries = serde_json::to_value(&doc.entries).unwrap();
        entries[0]["orth"] = "lahhutaminne".into();
        assert_eq!(store.save_corrections("j", 1, &entries).unwrap(), PageState::InReview);
        assert_eq!(store.approve("j", 1).unwrap(), PageState::Approved);

        let path = store.export("j", ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# coverage: 1 of 2 pages; excluded pages: 2 (tiled)\r\n"), "{text}");
        assert!(text.contains("lahhutaminne"));
        let back = csv_to_entries(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].provenance.page, 1);

        store.advance_to_recognized("j", 2, &rt).unwrap();
        let tei = std::fs::read_to_string(store.export("j", ExportFormat::Tei).unwrap()).unwrap();
        let doc = parse_tei_fragment(tei.split_once("-->\n").unwrap().1).unwrap();
        assert_eq!(doc.entries.iter().map(|e| e.orth.as_str()).collect::<Vec<_>>(), ["lahhutaminne", "aus", "ärra"]);
        let ids: HashSet<_> = doc.entries.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 3);
        assert_eq!(std::fs::read_to_string(store.export("j", ExportFormat::Tei).unwrap()).unwrap(), tei);
    }

    #[test]
    fn failures_and_retries() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        store.create_job(Some("j"), vec![scan("p1.png", 10)], config()).unwrap();
        let rt = fast(Runtime::new(Arc::new(MockProvider::new())));
        store.advance("j", 1, &rt).unwrap();
        let state = store.advance("j", 1, &rt).unwrap();
        assert!(matches!(state, PageState::Failed { stage: Stage::Recognizing, retry_count: 0, .. }), "{state:?}");
        assert!(matches!(store.advance("j", 1, &rt), Err(JobError::IllegalTransition { .. })));
        for expected in 1..=3 {
            let s = store.retry("j", 1, &rt).unwrap();
            assert!(matches!(s, PageState::Failed { retry_count, .. } if retry_count == expected));
        }
        assert!(matches!(store.retry("j", 1, &rt), Err(JobError::RetryLimit { limit: 3, .. })));

        let key = tile_key(&store, "j", "p1");
        store.create_job(Some("k"), vec![scan("p1.png", 10)], config()).unwrap();
        let mock = MockProvider::new()
            .with_script(key.clone(), [MockStep::Fail("down".into())])
            .with_reply(key, tei_reply(&[("aus", "ehrbar")]));
        let rt = fast(Runtime::new(Arc::new(mock)));
        store.advance("k", 1, &rt).unwrap();
        assert!(matches!(store.advance("k", 1, &rt).unwrap(), PageState::Failed { .. }));
        assert_eq!(store.retry("k", 1, &rt).unwrap(), PageState::Merging);
        assert_eq!(store.advance("k", 1, &rt).unwrap(), PageState::Recognized);
    }

    #[test]
    fn corrections_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        store.create_job(Some("j"), vec![scan("p1.png", 10)], config()).unwrap();
        let rt = fast(Runtime::new(Arc::new(MockProvider::new())));
        store.advance("j", 1, &rt).unwrap();
        let key = tile_key(&store, "j", "p1");
        let rt = fast(Runtime::new(Arc::new(MockProvider::new().with_reply(key, tei_reply(&[("aus", "ehrbar")])))));
        store.advance_to_recognized("j", 1, &rt).unwrap();
        let body = serde_json::json!([{"id": "e1", "orth": "", "senses": []}]);
        let Err(JobError::Validation(v)) = store.save_corrections("j", 1, &body) else { panic!() };
        assert_eq!(v[0].field, "orth");
        assert!(matches!(store.save_corrections("j", 1, &serde_json::json!({"x": 1})), Err(JobError::Validation(_))));
        assert_eq!(store.load("j").unwrap().pages[0].state, PageState::Recognized);
    }

    #[test]
    fn nothing_to_export() {
        let dir = tempfile::tempdir().unwrap();
        let store = JobStore::open(dir.path()).unwrap();
        store.create_job(Some("j"), vec![scan("p1.png", 10)], config()).unwrap();
        assert!(matches!(store.export("j", ExportFormat::Csv), Err(JobError::NothingToExport)));
        assert!(matches!(store.report("j", None), Err(JobError::NoReports)));
        assert!(matches!(store.load("nope"), Err(JobError::UnknownJob(_))));
        assert!(matches!(store.load("../x"), Err(JobError::UnknownJob(_))));
    }

    #[test]
    fn config_toml_round_trip() {
        let c =
            JobConfig::from_toml("schema = \"nine_field\"\nsource_id = \"helle\"\n[tiling]\nsegments_per_column = 3\n")
                .unwrap();
        assert_eq!(c.schema, SchemaId::NineField);
        assert_eq!(c.tiling.segments_per_column, 3);
        assert_eq!(c.tiling.overlap_fraction, 0.25);
        assert_eq!(JobConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(JobConfig::from_toml("bogus = 1").is_err());
        assert!(JobConfig::from_toml("schema = \"nine_field\"\nmerge = \"llm\"").is_err());
    }
}
