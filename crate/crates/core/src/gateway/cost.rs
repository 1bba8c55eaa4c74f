//! Usage ledger and exact cost arithmetic.
//!
//! Rates are stored in micro-currency per million tokens, so a token count
//! times a rate is an exact amount in units of 10⁻¹² currency. Sums stay
//! exact; rounding happens only when a total is rendered.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Refusal,
    Error,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Refusal => "refusal",
            Outcome::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub request_id: String,
    pub provider_id: String,
    pub model_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub outcome: Outcome,
    /// False when the provider did not report token counts (then both are 0).
    #[serde(default = "yes")]
    pub tokens_reported: bool,
}

fn yes() -> bool {
    true
}

/// Append-only usage ledger, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct UsageLedger {
    path: Option<PathBuf>,
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed ledger and loads existing records.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let records = if path.exists() {
            drop_torn_tail(&path)?;
            read_ledger(&path)?
        } else {
            Vec::new()
        };
        Ok(Self { path: Some(path), records: Mutex::new(records) })
    }

    pub fn record(&self, usage: UsageRecord) -> Result<(), GatewayError> {
        let mut records = self.records.lock().expect("ledger lock poisoned");
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&usage).expect("usage record serialises");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        records.push(usage);
        Ok(())
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("ledger lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts a trailing partial line left by a crash mid-append, so later appends
/// start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<(), GatewayError> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new().write(true).open(path)?;
    file.set_len(keep as u64)?;
    Ok(())
}

/// Reads a JSONL ledger. A torn final line (from a crash mid-append) is skipped.
pub fn read_ledger(path: &Path) -> Result<Vec<UsageRecord>, GatewayError> {
    let file = std::fs::File::open(path)?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => break,
            Err(e) => return Err(GatewayError::Store(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Per-million-token rates for one model, in micro-currency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rates {
    pub input_micro_per_million: u64,
    pub output_micro_per_million: u64,
}

impl Rates {
    /// Builds rates from currency amounts per million tokens, e.g. `1.25`.
    pub fn per_million(input: f64, output: f64) -> Self {
        assert!(input >= 0.0 && output >= 0.0, "rates must be non-negative");
        Self {
            input_micro_per_million: (input * 1e6).round() as u64,
            output_micro_per_million: (output * 1e6).round() as u64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriceTable {
    models: BTreeMap<String, Rates>,
}

#[derive(Deserialize)]
struct RateFile {
    input_per_million: f64,
    output_per_million: f64,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(mut self, model_id: impl Into<String>, rates: Rates) -> Self {
        self.models.insert(model_id.into(), rates);
        self
    }

    pub fn rates(&self, model_id: &str) -> Option<Rates> {
        self.models.get(model_id).copied()
    }

    /// Parses a TOML table of the form
    ///
    /// ```toml
    /// [models."gemini-2.5-pro"]
    /// input_per_million = 1.25
    /// output_per_million = 10.0
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            models: BTreeMap<String, RateFile>,
        }
        let file: File = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        let mut table = PriceTable::new();
        for (id, r) in file.models {
            if r.input_per_million < 0.0 || r.output_per_million < 0.0 {
                return Err(GatewayError::Config(format!("negative rate for model {id}")));
            }
            table = table.with_model(id, Rates::per_million(r.input_per_million, r.output_per_million));
        }
        Ok(table)
    }
}

/// An exact amount in 10⁻¹² currency units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(pub u128);

const PICO_PER_THOUSANDTH: u128 = 1_000_000_000;

impl Cost {
    pub fn as_f64(&self) -> f64 {
        self.0 as f64 / 1e12
    }

    /// Rounded half-up to thousandths of a currency unit.
    pub fn thousandths(&self) -> u128 {
        (self.0 + PICO_PER_THOUSANDTH / 2) / PICO_PER_THOUSANDTH
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.thousandths();
        write!(f, "{}.{:03}", t / 1000, t % 1000)
    }
}

pub fn record_cost(usage: &UsageRecord, table: &PriceTable) -> Result<Cost, GatewayError> {
    let rates = table.rates(&usage.model_id).ok_or_else(|| GatewayError::UnknownModel(usage.model_id.clone()))?;
    Ok(Cost(
        usage.input_tokens as u128 * rates.input_micro_per_million as u128
            + usage.output_tokens as u128 * rates.output_micro_per_million as u128,
    ))
}

/// Σ (input·in_rate + output·out_rate) / 10⁶ over all records.
pub fn estimate_cost<'a>(
    records: impl IntoIterator<Item = &'a UsageRecord>,
    table: &PriceTable,
) -> Result<Cost, GatewayError> {
    records.into_iter().try_fold(Cost::default(), |acc, r| Ok(acc + record_cost(r, table)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(model: &str, input: u64, output: u64) -> UsageRecord {
        UsageRecord {
            request_id: "r".into(),
            provider_id: "mock".into(),
            model_id: model.into(),
            input_tokens: input,
            output_tokens: output,
            latency_ms: 0,
            attempt_count: 1,
            outcome: Outcome::Ok,
            tokens_reported: true,
        }
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        let table = PriceTable::new();
        assert_eq!(estimate_cost(&[], &table).unwrap().to_string(), "0.000");
    }

    #[test]
    fn whole_page_row_renders() {
        let table = PriceTable::new().with_model("m", Rates::per_million(1.25, 10.0));
        let cost = estimate_cost(&[usage("m", 7184, 36102)], &table).unwrap();
        assert_eq!(cost.to_string(), "0.370");
    }

    #[test]
    fn linear_in_records() {
        let table = PriceTable::new().with_model("m", Rates::per_million(3.0, 15.0));
        let one = usage("m", 1234, 567);
        let single = estimate_cost([&one], &table).unwrap();
        let double = estimate_cost([&one, &one], &table).unwrap();
        assert_eq!(double.0, 2 * single.0);
    }

    #[test]
    fn unknown_model() {
        let err = estimate_cost(&[usage("nope", 1, 1)], &PriceTable::new()).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownModel(m) if m == "nope"));
    }

    #[test]
    fn price_table_from_toml() {
        let table =
            PriceTable::from_toml("[models.\"a-1\"]\ninput_per_million = 1.25\noutput_per_million = 10\n").unwrap();
        assert_eq!(
            table.rates("a-1"),
            Some(Rates { input_micro_per_million: 1_250_000, output_micro_per_million: 10_000_000 })
        );
        assert!(PriceTable::from_toml("[models.x]\ninput_per_million = -1\noutput_per_million = 1\n").is_err());
    }

    #[test]
    fn ledger_file_survives_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let ledger = UsageLedger::open(&path).unwrap();
        ledger.record(usage("m", 1, 2)).unwrap();
        ledger.record(usage("m", 3, 4)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"request_id\":\"tor").unwrap();
        let reopened = UsageLedger::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        reopened.record(usage("m", 5, 6)).unwrap();
        assert_eq!(read_ledger(&path).unwrap().len(), 3);
    }
}
