//! Helpers shared by the integration tests: independent metric and tiling
//! oracles, fixture setup and a subprocess driver for kill-and-resume runs.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use fraktur::entry::SchemaId;
use fraktur::gateway::{MockProvider, RetryPolicy};
use fraktur::jobs::{JobConfig, JobStore, PageState, Runtime, ScanInput, CRASH_ENV};
use fraktur::synth::{write_fixture, FixtureLayout, PageSpec};
use fraktur::tiler::TilingSpec;

/// Edit distance by memoised recursion over suffixes.
pub fn levenshtein_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo).min(go(a, b, i, j + 1, memo)).min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Longest common block by trying every start pair; the earliest in `a`,
/// then in `b`, wins ties.
fn longest_block<T: PartialEq>(a: &[T], b: &[T]) -> (usize, usize, usize) {
    let mut best = (0, 0, 0);
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut k = 0;
            while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                k += 1;
            }
            if k > best.2 {
                best = (i, j, k);
            }
        }
    }
    best
}

fn matched<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (i, j, k) = longest_block(a, b);
    if k == 0 {
        return 0;
    }
    k + matched(&a[..i], &b[..j]) + matched(&a[i + k..], &b[j + k..])
}

/// Gestalt similarity `2M / (|a| + |b|)`, 1.0 for two empty sequences.
pub fn ro_oracle<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched(a, b) as f64 / total as f64
}

/// All sequences over `alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Row coverage count of `ranges` over `height` rows.
pub fn row_coverage(height: u32, ranges: &[(u32, u32)]) -> Vec<u32> {
    let mut rows = vec![0u32; height as usize];
    for &(y0, y1) in ranges {
        for r in y0..y1 {
            rows[r as usize] += 1;
        }
    }
    rows
}

/// Rows shared by two ranges, counted one by one.
pub fn shared_rows(a: (u32, u32), b: (u32, u32)) -> u32 {
    (a.0..a.1).filter(|r| (b.0..b.1).contains(r)).count() as u32
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub layout: FixtureLayout,
    pub store: JobStore,
}

impl Fixture {
    pub fn new(pages: &[PageSpec], schema: SchemaId) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let layout = write_fixture(&dir.path().join("fx"), pages, &TilingSpec::default(), schema).expect("fixture");
        let store = JobStore::open(dir.path().join("store")).expect("store");
        Self { dir, layout, store }
    }

    pub fn create_job(&self, job_id: &str, config: JobConfig) {
        let scans = self.layout.scans.iter().map(|p| ScanInput::from_path(p).expect("scan")).collect();
        self.store.create_job(Some(job_id), scans, config).expect("create job");
    }

    pub fn mock(&self) -> MockProvider {
        MockProvider::from_dir(&self.layout.fixtures).expect("fixtures")
    }

    pub fn runtime(&self) -> Runtime {
        Runtime::new(Arc::new(self.mock())).with_retry(fast_retry())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy { base_delay: std::time::Duration::from_millis(1), ..RetryPolicy::default() }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fraktur")
}

/// Runs the CLI against the fixture's store with the mock provider.
pub fn run_cli(fx: &Fixture, audit: &Path, args: &[&str], crash_at: Option<&str>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.arg("--store")
        .arg(fx.store.root())
        .args(["--provider", "mock", "--fixtures"])
        .arg(&fx.layout.fixtures)
        .arg("--mock-audit")
        .arg(audit)
        .args(["--retry-base-ms", "1"])
        .args(args)
        .env_remove(CRASH_ENV)
        .env_remove("FRAKTUR_CONFIG")
        .env_remove("FRAKTUR_PROVIDER");
    if let Some(point) = crash_at {
        cmd.env(CRASH_ENV, point);
    }
    cmd.output().expect("run fraktur")
}

pub fn crash_pages() -> Vec<PageSpec> {
    vec![PageSpec::new("c001", 14, 0), PageSpec::new("c002", 14, 3)]
}

fn merged_files(fx: &Fixture, job: &str) -> Vec<(String, Vec<u8>)> {
    let dir = fx.store.job_dir(job).join("merged");
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .filter(|e| e.path().extension().is_some_and(|x| x == "xml"))
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

/// Outcome of one kill-and-resume run.
pub struct CrashRun {
    pub crashed: bool,
    pub calls: Vec<String>,
    pub tiles: usize,
    pub merged_equal: bool,
    pub all_recognized: bool,
}

impl CrashRun {
    pub fn check(&self) -> Result<(), String> {
        let unique: HashSet<_> = self.calls.iter().collect();
        if !self.crashed {
            return Err("crash point never reached".into());
        }
        if unique.len() != self.calls.len() {
            return Err(format!("{} duplicate provider call(s)", self.calls.len() - unique.len()));
        }
        if self.calls.len() != self.tiles {
            return Err(format!("{} calls for {} tiles", self.calls.len(), self.tiles));
        }
        if !self.all_recognized {
            return Err("pages not recognized after resume".into());
        }
        if !self.merged_equal {
            return Err("merged output differs from an uninterrupted run".into());
        }
        Ok(())
    }
}

fn pipeline(fx: &Fixture, audit: &Path, crash_at: Option<&str>) -> bool {
    let mut crashed = false;
    for cmd in ["ocr", "merge"] {
        let out = run_cli(fx, audit, &[cmd, "crash"], crash_at);
        crashed |= !out.status.success();
    }
    crashed
}

fn audit_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap_or_default().lines().map(str::to_string).collect()
}

/// Crashes the CLI at `point`, resumes it, and compares with a clean run.
pub fn crash_and_resume(point: &str) -> CrashRun {
    let config = JobConfig { max_in_flight: 1, ..JobConfig::default() };

    let clean = Fixture::new(&crash_pages(), SchemaId::TeiSubset);
    clean.create_job("crash", config.clone());
    let clean_audit = clean.path("audit.log");
    assert!(!pipeline(&clean, &clean_audit, None), "clean run failed");

    let fx = Fixture::new(&crash_pages(), SchemaId::TeiSubset);
    fx.create_job("crash", config);
    let audit = fx.path("audit.log");
    let crashed = pipeline(&fx, &audit, Some(point));
    fx.store.load("crash").expect("manifest readable after crash");
    let resumed_ok = !pipeline(&fx, &audit, None);

    let job = fx.store.load("crash").expect("manifest");
    CrashRun {
        crashed,
        calls: audit_lines(&audit),
        tiles: audit_lines(&clean_audit).len(),
        merged_equal: resumed_ok && merged_files(&fx, "crash") == merged_files(&clean, "crash"),
        all_recognized: job.pages.iter().all(|p| p.state == PageState::Recognized),
    }
}
