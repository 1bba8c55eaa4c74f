//! Command-line front end. Results go to stdout as JSON (or CSV where
//! noted), diagnostics to stderr. Exit codes: 0 success, 1 domain error,
//! 2 usage error.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use fraktur::enrich::{
    enrich, enrichment_csv, import_triage_csv, load_source_csv, map_sources, mapping_csv, triage_stats, Adjudicator,
    ColumnMap, DEFAULT_BATCH_SIZE, DEFAULT_MATCH_THRESHOLD,
};
use fraktur::entry::SchemaId;
use fraktur::eval::aggregate;
use fraktur::gateway::{
    ApiFlavor, Gateway, HttpProvider, MockProvider, ModelParams, PriceTable, PromptLibrary, Provider, RetryPolicy,
    UsageLedger,
};
use fraktur::jobs::{ExportFormat, JobConfig, JobStore, MergeMode, PageState, Runtime, ScanInput};
use fraktur::server::{serve, AppState};
use fraktur::synth::{standard_pages, write_fixture};
use fraktur::tiler::{crop, plan_tiles, PageImage, TileMode, TilingSpec};

#[derive(Parser)]
#[command(name = "fraktur", version, about = "Digitise historical dictionary scans with vision language models")]
struct Cli {
    /// TOML settings file; flags and environment variables take precedence.
    #[arg(long, env = "FRAKTUR_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Directory holding `jobs/` [default: .]
    #[arg(long, env = "FRAKTUR_STORE", global = true)]
    store: Option<PathBuf>,
    /// Provider id: `mock`, `openai`, `anthropic`, `gemini` or one configured under `[providers]`.
    #[arg(long, env = "FRAKTUR_PROVIDER", global = true)]
    provider: Option<String>,
    /// Reply fixtures for the mock provider, one file per key.
    #[arg(long, env = "FRAKTUR_FIXTURES", global = true)]
    fixtures: Option<PathBuf>,
    /// Endpoint URL for an HTTP provider.
    #[arg(long, env = "FRAKTUR_ENDPOINT", global = true)]
    endpoint: Option<String>,
    /// Request dialect of the endpoint: `open_ai_chat` or `anthropic_messages`.
    #[arg(long, env = "FRAKTUR_API_FLAVOR", global = true)]
    api_flavor: Option<String>,
    /// Directory overriding the built-in prompt assets.
    #[arg(long, env = "FRAKTUR_PROMPTS", global = true)]
    prompts: Option<PathBuf>,
    /// Price table (TOML) used for cost figures.
    #[arg(long, env = "FRAKTUR_PRICES", global = true)]
    prices: Option<PathBuf>,
    /// Base delay of the retry backoff in milliseconds [default: 1000]
    #[arg(long, env = "FRAKTUR_RETRY_BASE_MS", global = true)]
    retry_base_ms: Option<u64>,
    /// Append the request id of every mock call to this file.
    #[arg(long, env = "FRAKTUR_MOCK_AUDIT", global = true, hide = true)]
    mock_audit: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default, Clone)]
struct TilingFlags {
    /// whole_page, two_columns or segments
    #[arg(long)]
    mode: Option<TileMode>,
    /// Segments per column
    #[arg(long)]
    segments: Option<u32>,
    /// Overlap fraction between neighbouring segments, 0 to 0.5
    #[arg(long)]
    overlap: Option<f64>,
    /// Column split position as a fraction of the page width
    #[arg(long)]
    gutter: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Create a job from page scans.
    New {
        job_id: String,
        #[arg(required = true)]
        scans: Vec<PathBuf>,
        /// nine_field or tei_subset
        #[arg(long)]
        schema: Option<String>,
        #[arg(long)]
        source_id: Option<String>,
        /// Model id sent to the provider
        #[arg(long)]
        model: Option<String>,
        /// Ground truth directory scored after merging
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        tiling: TilingFlags,
    },
    /// Cut one scan into tiles and write them with the plan.
    Tile {
        scan: PathBuf,
        /// Output directory [default: {scan stem}_tiles]
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tiling: TilingFlags,
    },
    /// Tile and recognise pages of a job.
    Ocr {
        job: String,
        /// Only this page number (1-based)
        #[arg(long)]
        page: Option<u32>,
    },
    /// Merge recognised tiles into pages.
    Merge {
        job: String,
        /// Only this page number (1-based)
        #[arg(long)]
        page: Option<u32>,
        /// Let the model merge TEI fragments
        #[arg(long)]
        llm: bool,
    },
    /// Score pages against ground truth and write report files.
    Eval {
        job: String,
        /// Directory with one ground truth file per page
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Map an anchor dictionary against other sources, optionally adding modern forms.
    Enrich {
        /// CSV of the dictionary that anchors the mapping
        #[arg(long)]
        anchor: PathBuf,
        /// CSVs of the dictionaries mapped onto the anchor
        #[arg(long, num_args = 1.., required = true)]
        sources: Vec<PathBuf>,
        /// Let the model decide ambiguous matches
        #[arg(long)]
        adjudicate: bool,
        /// Also ask the model for modern forms, written to `{out}/enrichment.csv`
        #[arg(long)]
        modernize: bool,
        /// Output directory; without it the mapping CSV goes to stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fuzzy match threshold on normalised forms, 0 to 1
        #[arg(long)]
        threshold: Option<f64>,
        /// Mapping rows per model request with `--modernize`
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Summarise triage labels from a CSV with a `label` column.
    Triage { labels: PathBuf },
    /// Write the unified export of a job and print its path.
    Export {
        job: String,
        /// csv or tei
        #[arg(long)]
        format: Option<String>,
    },
    /// Print the corpus report of a job and write its files.
    Report { job: String },
    /// Print a job's manifest.
    Status { job: String },
    /// Re-run the failed stage of a page.
    Retry {
        job: String,
        #[arg(long)]
        page: u32,
        /// Switch to another model id before retrying
        #[arg(long)]
        model: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Write a synthetic three-page fixture (scans, mock replies, ground truth).
    Synth {
        dir: PathBuf,
        /// nine_field or tei_subset
        #[arg(long)]
        schema: Option<String>,
        #[command(flatten)]
        tiling: TilingFlags,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderEntry {
    endpoint: String,
    #[serde(default)]
    api_flavor: Option<ApiFlavor>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnrichFile {
    threshold: Option<f64>,
    batch_size: Option<usize>,
    adjudicate: Option<bool>,
    modernize: Option<bool>,
}

/// Settings file. Keys mirror the global flags; `[job]` holds defaults for
/// new jobs in the job config format.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    store: Option<PathBuf>,
    provider: Option<String>,
    fixtures: Option<PathBuf>,
    endpoint: Option<String>,
    api_flavor: Option<ApiFlavor>,
    prompts: Option<PathBuf>,
    prices: Option<PathBuf>,
    retry_base_ms: Option<u64>,
    mock_audit: Option<PathBuf>,
    bind: Option<SocketAddr>,
    export_format: Option<String>,
    providers: BTreeMap<String, ProviderEntry>,
    job: Option<toml::Value>,
    enrich: EnrichFile,
}

#[derive(Debug)]
struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }
}

impl From<fraktur::jobs::JobError> for Failure {
    fn from(e: fraktur::jobs::JobError) -> Self {
        Failure::new(e.code(), e.to_string())
    }
}

macro_rules! impl_failure {
    ($($t:ty => $code:literal),* $(,)?) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new($code, e.to_string())
            }
        }
    )*};
}

impl_failure!(
    fraktur::gateway::GatewayError => "gateway_error",
    fraktur::tiler::TileError => "tiling_error",
    fraktur::enrich::EnrichError => "enrich_error",
    fraktur::eval::EvalError => "eval_error",
    std::io::Error => "io_error",
);

type Result<T> = std::result::Result<T, Failure>;

struct Settings {
    cli: Cli,
    file: FileConfig,
}

fn flavor_from_str(s: &str) -> Result<ApiFlavor> {
    serde_json::from_value(json!(s)).map_err(|_| Failure::new("invalid_config", format!("unknown api flavor {s:?}")))
}

fn parse_schema(s: &str) -> Result<SchemaId> {
    serde_json::from_value(json!(s.replace('-', "_")))
        .map_err(|_| Failure::new("invalid_config", format!("unknown schema {s:?} (nine_field, tei_subset)")))
}

fn print(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("output serialises"));
}

impl Settings {
    fn load(cli: Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::new("invalid_config", format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Failure::new("invalid_config", format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Ok(Self { cli, file })
    }

    fn store(&self) -> Result<JobStore> {
        let root = self.cli.store.clone().or_else(|| self.file.store.clone()).unwrap_or_else(|| PathBuf::from("."));
        Ok(JobStore::open(root)?)
    }

    fn job_defaults(&self) -> Result<JobConfig> {
        match &self.file.job {
            Some(v) => {
                let text = toml::to_string(v).map_err(|e| Failure::new("invalid_config", e.to_string()))?;
                Ok(JobConfig::from_toml(&text)?)
            }
            None => Ok(JobConfig::default()),
        }
    }

    fn tiling(&self, flags: &TilingFlags) -> Result<TilingSpec> {
        let mut t = self.job_defaults()?.tiling;
        if let Some(m) = flags.mode {
            t.mode = m;
        }
        if let Some(n) = flags.segments {
            t.segments_per_column = n;
        }
        if let Some(o) = flags.overlap {
            t.overlap_fraction = o;
        }
        if let Some(g) = flags.gutter {
            t.gutter_ratio = g;
        }
        t.validate()?;
        Ok(t)
    }

    fn prompts(&self) -> PromptLibrary {
        match self.cli.prompts.clone().or_else(|| self.file.prompts.clone()) {
            Some(dir) => PromptLibrary::with_dir(dir),
            None => PromptLibrary::builtin(),
        }
    }

    fn prices(&self) -> Result<Option<PriceTable>> {
        match self.cli.prices.clone().or_else(|| self.file.prices.clone()) {
            Some(p) => Ok(Some(PriceTable::from_toml(&std::fs::read_to_string(&p)?)?)),
            None => Ok(None),
        }
    }

    fn retry(&self) -> RetryPolicy {
        let base = self.cli.retry_base_ms.or(self.file.retry_base_ms).unwrap_or(1000);
        RetryPolicy { base_delay: Duration::from_millis(base), ..RetryPolicy::default() }
    }

    fn provider(&self, fallback_id: &str) -> Result<Arc<dyn Provider>> {
        let id = self.cli.provider.clone().or_else(|| self.file.provider.clone()).unwrap_or_else(|| fallback_id.into());
        if id == "mock" {
            let mut mock = match self.cli.fixtures.clone().or_else(|| self.file.fixtures.clone()) {
                Some(dir) => MockProvider::from_dir(dir)?,
                None => MockProvider::new(),
            };
            if let Some(p) = self.cli.mock_audit.clone().or_else(|| self.file.mock_audit.clone()) {
                mock = mock.with_audit_log(p);
            }
            return Ok(Arc::new(mock));
        }
        let configured = self.file.providers.get(&id);
        let known = match id.as_str() {
            "openai" => Some(("https://api.openai.com/v1/chat/completions", ApiFlavor::OpenAiChat)),
            "anthropic" => Some(("https://api.anthropic.com/v1/messages", ApiFlavor::AnthropicMessages)),
            "gemini" => Some((
                "https://generativelanguage.googleapis.com/v1beta/openai/chat/completions",
                ApiFlavor::OpenAiChat,
            )),
            _ => None,
        };
        let endpoint = self
            .cli
            .endpoint
            .clone()
            .or_else(|| self.file.endpoint.clone())
            .or_else(|| configured.map(|c| c.endpoint.clone()))
            .or_else(|| known.map(|k| k.0.to_string()))
            .ok_or_else(|| Failure::new("invalid_config", format!("no endpoint for provider {id:?}")))?;
        let flavor = match &self.cli.api_flavor {
            Some(f) => flavor_from_str(f)?,
            None => self
                .file
                .api_flavor
                .or_else(|| configured.and_then(|c| c.api_flavor))
                .or_else(|| known.map(|k| k.1))
                .unwrap_or(ApiFlavor::OpenAiChat),
        };
        Ok(Arc::new(HttpProvider::new(id, endpoint, flavor)))
    }

    fn runtime(&self, job_provider: &str) -> Result<Runtime> {
        Ok(Runtime::new(self.provider(job_provider)?).with_prompts(self.prompts()).with_retry(self.retry()))
    }
}

fn page_numbers(store: &JobStore, job: &str, page: Option<u32>) -> Result<Vec<u32>> {
    let j = store.load(job)?;
    match page {
        Some(n) => {
            j.page(n)?;
            Ok(vec![n])
        }
        None => Ok(j.pages.iter().map(|p| p.number).collect()),
    }
}

fn report_state(page: u32, state: &PageState, failed: &mut usize) {
    print(&json!({"page": page, "state": state}));
    if let PageState::Failed { stage, code, error, .. } = state {
        eprintln!("error[{code}]: page {page} failed while {stage:?}: {error}");
        *failed += 1;
    }
}

fn run(settings: Settings) -> Result<()> {
    match &settings.cli.command {
        Command::New { job_id, scans, schema, source_id, model, reference, tiling } => {
            let mut config = settings.job_defaults()?;
            config.tiling = settings.tiling(tiling)?;
            if let Some(s) = schema {
                config.schema = parse_schema(s)?;
            }
            if let Some(s) = source_id {
                config.source_id = s.clone();
            }
            if let Some(m) = model {
                config.model.model_id = m.clone();
            }
            if let Some(p) = settings.cli.provider.clone().or_else(|| settings.file.provider.clone()) {
                config.model.provider_id = p;
            }
            if let Some(r) = reference {
                config.reference_dir = Some(std::path::absolute(r)?);
            }
            let inputs = scans.iter().map(|p| ScanInput::from_path(p)).collect::<std::result::Result<Vec<_>, _>>()?;
            let job = settings.store()?.create_job(Some(job_id), inputs, config)?;
            print(&job.summary());
        }
        Command::Tile { scan, out, tiling } => {
            let spec = settings.tiling(tiling)?;
            let stem = scan.file_stem().and_then(|s| s.to_str()).unwrap_or("page").to_string();
            let page = PageImage::open(&stem, scan)?;
            let plan = plan_tiles(&page, &spec)?;
            let out = out.clone().unwrap_or_else(|| PathBuf::from(format!("{stem}_tiles")));
            std::fs::create_dir_all(&out)?;
            for tile in &plan.tiles {
                crop(&page, tile)?.save(out.join(format!("{}.png", tile.file_stem(&stem))))?;
            }
            let plan_json = serde_json::to_string_pretty(&plan).expect("plan serialises");
            std::fs::write(out.join(format!("{stem}.plan.json")), &plan_json)?;
            print(&plan);
        }
        Command::Ocr { job, page } => {
            let store = settings.store()?;
            let rt = settings.runtime(&store.load(job)?.config.model.provider_id)?;
            let mut failed = 0;
            for n in page_numbers(&store, job, *page)? {
                let mut state = store.load(job)?.page(n)?.state.clone();
                while matches!(state, PageState::Pending | PageState::Tiled | PageState::Recognizing) {
                    state = store.advance(job, n, &rt)?;
                }
                report_state(n, &state, &mut failed);
            }
            if failed > 0 {
                return Err(Failure::new("stage_failed", format!("{failed} page(s) failed")));
            }
        }
        Command::Merge { job, page, llm } => {
            let store = settings.store()?;
            let rt = settings
                .runtime(&store.load(job)?.config.model.provider_id)?
                .with_merge_override(llm.then_some(MergeMode::Llm));
            let mut failed = 0;
            for n in page_numbers(&store, job, *page)? {
                let state = store.load(job)?.page(n)?.state.clone();
                let state = if state == PageState::Merging { store.advance(job, n, &rt)? } else { state };
                report_state(n, &state, &mut failed);
            }
            if failed > 0 {
                return Err(Failure::new("stage_failed", format!("{failed} page(s) failed")));
            }
        }
        Command::Eval { job, reference } => {
            let store = settings.store()?;
            let reference = match reference {
                Some(r) => r.clone(),
                None => store
                    .load(job)?
                    .config
                    .reference_dir
                    .ok_or_else(|| Failure::new("invalid_config", "no reference directory given or configured"))?,
            };
            let reports = store.evaluate(job, &reference)?;
            let corpus = aggregate(&reports, &[])?;
            let files = corpus.write(&store.job_dir(job).join("eval").join("report"), job)?;
            for r in &reports {
                print(r);
            }
            eprintln!("{} page(s) scored; report files: {}", reports.len(), display_paths(&files));
        }
        Command::Enrich { anchor, sources, adjudicate, modernize, out, threshold, batch_size } => {
            let threshold = threshold.or(settings.file.enrich.threshold).unwrap_or(DEFAULT_MATCH_THRESHOLD);
            let batch_size = batch_size.or(settings.file.enrich.batch_size).unwrap_or(DEFAULT_BATCH_SIZE);
            let adjudicate = *adjudicate || settings.file.enrich.adjudicate.unwrap_or(false);
            let modernize = *modernize || settings.file.enrich.modernize.unwrap_or(false);
            let load = |p: &Path| -> Result<_> {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("source");
                Ok(load_source_csv(&std::fs::read_to_string(p)?, id, &ColumnMap::default())?)
            };
            let anchor_set = load(anchor)?;
            let others = sources.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let defaults = settings.job_defaults()?;
            let params = defaults.model.clone();
            let needs_model = adjudicate || modernize;
            let gateway = if needs_model {
                let mut g = Gateway::new(settings.provider(&params.provider_id)?).with_retry(settings.retry());
                if let Some(dir) = out {
                    g = g.with_store(dir.join("raw")).with_ledger(UsageLedger::open(dir.join("ledger.jsonl"))?);
                }
                Some(g)
            } else {
                None
            };
            let prompts = settings.prompts();
            let adj = match (&gateway, adjudicate) {
                (Some(g), true) => Some(Adjudicator { gateway: g, prompts: &prompts, params: &params }),
                _ => None,
            };
            let (rows, warnings) = map_sources(&anchor_set, &others, threshold, adj.as_ref());
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let mapping = mapping_csv(&rows, &anchor_set.source_id, &others);
            match out {
                None => {
                    if modernize {
                        return Err(Failure::new("usage", "--modernize needs --out"));
                    }
                    print!("{mapping}");
                }
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("mapping.csv"), &mapping)?;
                    let mut summary = json!({"rows": rows.len(), "mapping": dir.join("mapping.csv")});
                    if let (true, Some(g)) = (modernize, &gateway) {
                        let enriched = enrich(
                            &rows,
                            g,
                            &prompts,
                            &params,
                            batch_size,
                            Some(&dir.join("enrich.checkpoint.jsonl")),
                        )?;
                        std::fs::write(dir.join("enrichment.csv"), enrichment_csv(&enriched))?;
                        summary["enrichment"] = json!(dir.join("enrichment.csv"));
                        summary["parse_failed"] = json!(enriched.iter().filter(|r| r.is_parse_failed()).count());
                    }
                    print(&summary);
                }
            }
        }
        Command::Triage { labels } => {
            let stats = triage_stats(&import_triage_csv(&std::fs::read_to_string(labels)?)?)?;
            print(&stats);
        }
        Command::Export { job, format } => {
            let format: ExportFormat = format
                .clone()
                .or_else(|| settings.file.export_format.clone())
                .unwrap_or_else(|| "csv".into())
                .parse()
                .map_err(|m: String| Failure::new("usage", m))?;
            let path = settings.store()?.export(job, format)?;
            print(&json!({"path": path}));
        }
        Command::Report { job } => {
            let store = settings.store()?;
            let report = store.report(job, settings.prices()?.as_ref())?;
            report.write(&store.job_dir(job).join("eval").join("report"), job)?;
            print(&report);
        }
        Command::Status { job } => print(&settings.store()?.load(job)?),
        Command::Retry { job, page, model } => {
            let store = settings.store()?;
            if let Some(m) = model {
                let params = ModelParams { model_id: m.clone(), ..store.load(job)?.config.model };
                store.set_model_params(job, params)?;
            }
            let rt = settings.runtime(&store.load(job)?.config.model.provider_id)?;
            let state = store.retry(job, *page, &rt)?;
            let mut failed = 0;
            report_state(*page, &state, &mut failed);
            if failed > 0 {
                return Err(Failure::new("stage_failed", "retry failed"));
            }
        }
        Command::Serve { bind } => {
            let bind = bind.or(settings.file.bind).unwrap_or_else(|| "127.0.0.1:8080".parse().expect("valid address"));
            let state = Arc::new(AppState {
                store: settings.store()?,
                runtime: settings.runtime("mock")?,
                prices: settings.prices()?,
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, bind))?;
        }
        Command::Synth { dir, schema, tiling } => {
            let schema = match schema {
                Some(s) => parse_schema(s)?,
                None => settings.job_defaults()?.schema,
            };
            let layout = write_fixture(dir, &standard_pages(), &settings.tiling(tiling)?, schema)?;
            print(&json!({"scans": layout.scans, "fixtures": layout.fixtures, "reference": layout.reference}));
        }
    }
    Ok(())
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Settings::load(cli).and_then(run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.code == "usage" => {
            eprintln!("error: {}", f.message);
            ExitCode::from(2)
        }
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            ExitCode::from(1)
        }
    }
}
