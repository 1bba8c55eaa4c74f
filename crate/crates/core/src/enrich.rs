//! Cross-source headword mapping, enrichment with modern forms, and triage
//! statistics.
//!
//! Matching works on normalised keys. Every source glosses into German, so
//! besides the Estonian headword the German equivalent serves as a pivot:
//! Gutsclaff's `Ubbene` / `Apffel` finds Vestring's `Oun` / `Der Apffel`
//! through the shared key `apffel` although the Estonian forms have nothing
//! in common.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::entry::strip_code_fence;
use crate::eval::metrics::ro_ratio_str;
use crate::gateway::{build_text_request, Gateway, GatewayError, ModelParams, PromptLibrary};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.75;
pub const DEFAULT_BATCH_SIZE: usize = 25;
pub const PARSE_FAILED: &str = "PARSE-FAILED";

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error("no labels to summarise")]
    EmptyInput,
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("source {source_id}: {message}")]
    Source { source_id: String, message: String },
    #[error("batch {batch} failed after {completed} completed rows: {source}")]
    Gateway { batch: usize, completed: usize, source: GatewayError },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lang {
    Et,
    De,
}

const GERMAN_ARTICLES: [&str; 3] = ["der", "die", "das"];

/// Matching key for a word form. Never shown to users.
///
/// Lowercases, folds diacritics, and trims surrounding punctuation. German
/// forms lose leading articles. Estonian forms map `w` to `v` and collapse
/// runs of the same letter, which absorbs the doubled consonants and vowels
/// of historical spelling (`tubbakat` and `tubakat` share a key).
pub fn normalize_form(w: &str, lang: Lang) -> String {
    let folded: String = w.nfc().collect::<String>().to_lowercase().nfd().filter(|c| !is_combining_mark(*c)).collect();
    let mut words: Vec<&str> = folded
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect();
    if lang == Lang::De {
        while words.len() > 1 && GERMAN_ARTICLES.contains(&words[0]) {
            words.remove(0);
        }
    }
    let joined = words.join(" ");
    if lang == Lang::De {
        return joined;
    }
    let mut out = String::with_capacity(joined.len());
    for c in joined.chars().map(|c| if c == 'w' { 'v' } else { c }) {
        if c.is_alphabetic() && out.ends_with(c) {
            continue;
        }
        out.push(c);
    }
    out
}

/// One row of a source dictionary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRow {
    pub source_id: String,
    pub headword: String,
    pub equivalent: String,
    /// Further columns (modernised form, example, example translation, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl SourceRow {
    pub fn new(source_id: &str, headword: &str, equivalent: &str) -> Self {
        Self {
            source_id: source_id.into(),
            headword: headword.into(),
            equivalent: equivalent.into(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: &str) -> Self {
        self.extra.insert(key.into(), value.into());
        self
    }
}

/// All rows of one source, with the order of its extra columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSet {
    pub source_id: String,
    pub extra_columns: Vec<String>,
    pub rows: Vec<SourceRow>,
}

/// Which CSV columns hold the headword and the equivalent. All other
/// columns become extras.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub headword: String,
    pub equivalent: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { headword: "headword".into(), equivalent: "equivalent".into() }
    }
}

/// Reads a source CSV. Rows with an empty headword are skipped.
pub fn load_source_csv(text: &str, source_id: &str, columns: &ColumnMap) -> Result<SourceSet, EnrichError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| EnrichError::Source {
            source_id: source_id.into(),
            message: format!("missing column {name:?}"),
        })
    };
    let (hw, eq) = (find(&columns.headword)?, find(&columns.equivalent)?);
    let extra_columns: Vec<String> =
        header.iter().enumerate().filter(|(i, _)| *i != hw && *i != eq).map(|(_, h)| h.clone()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let headword = get(hw);
        if headword.is_empty() {
            continue;
        }
        let mut row = SourceRow { source_id: source_id.into(), headword, equivalent: get(eq), extra: BTreeMap::new() };
        for (i, h) in header.iter().enumerate() {
            if i != hw && i != eq {
                let v = get(i);
                if !v.is_empty() {
                    row.extra.insert(h.clone(), v);
                }
            }
        }
        rows.push(row);
    }
    Ok(SourceSet { source_id: source_id.into(), extra_columns, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pivot {
    Estonian,
    German,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub row_index: usize,
    pub row: SourceRow,
    pub kind: MatchKind,
    pub pivot: Pivot,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCandidates {
    pub source_id: String,
    /// Exact before fuzzy, then by ratio descending, then by row order.
    pub candidates: Vec<Candidate>,
}

fn key_match(a: &str, b: &str, threshold: f64) -> Option<(MatchKind, f64)> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    if a == b {
        return Some((MatchKind::Exact, 1.0));
    }
    let (la, lb) = (a.chars().count(), b.chars().count());
    // the ratio can not exceed 2·min/(la+lb)
    if 2.0 * la.min(lb) as f64 / ((la + lb) as f64) < threshold {
        return None;
    }
    let r = ro_ratio_str(a, b);
    (r >= threshold).then_some((MatchKind::Fuzzy, r))
}

/// Rows of every other source whose Estonian or German key matches the
/// anchor's exactly or with a gestalt ratio of at least `threshold`.
pub fn candidate_matches(anchor: &SourceRow, others: &[SourceSet], threshold: f64) -> Vec<SourceCandidates> {
    let a_et = normalize_form(&anchor.headword, Lang::Et);
    let a_de = normalize_form(&anchor.equivalent, Lang::De);
    others
        .iter()
        .map(|src| {
            let mut candidates: Vec<Candidate> = src
                .rows
                .iter()
                .enumerate()
                .filter_map(|(row_index, row)| {
                    let et = key_match(&a_et, &normalize_form(&row.headword, Lang::Et), threshold)
                        .map(|(k, r)| (k, r, Pivot::Estonian));
                    let de = key_match(&a_de, &normalize_form(&row.equivalent, Lang::De), threshold)
                        .map(|(k, r)| (k, r, Pivot::German));
                    let best = [et, de].into_iter().flatten().min_by(|x, y| x.0.cmp(&y.0).then(y.1.total_cmp(&x.1)))?;
                    Some(Candidate { row_index, row: row.clone(), kind: best.0, ratio: best.1, pivot: best.2 })
                })
                .collect();
            candidates.sort_by(|x, y| {
                x.kind.cmp(&y.kind).then(y.ratio.total_cmp(&x.ratio)).then(x.row_index.cmp(&y.row_index))
            });
            SourceCandidates { source_id: src.source_id.clone(), candidates }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Exact,
    Fuzzy,
    Llm,
    None,
}

impl MatchStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchStatus::Exact => "exact",
            MatchStatus::Fuzzy => "fuzzy",
            MatchStatus::Llm => "llm",
            MatchStatus::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatch {
    pub source_id: String,
    pub status: MatchStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<SourceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    pub anchor: SourceRow,
    pub matches: Vec<SourceMatch>,
}

/// Optional model used to settle ambiguous candidate sets.
#[derive(Clone, Copy)]
pub struct Adjudicator<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptLibrary,
    pub params: &'a ModelParams,
}

fn ask_model(adj: &Adjudicator<'_>, anchor: &SourceRow, cands: &[Candidate]) -> Result<Option<usize>, String> {
    let data = json!({
        "anchor": anchor,
        "candidates": cands.iter().map(|c| &c.row).collect::<Vec<_>>(),
    });
    let request =
        build_text_request("adjudicate", &data.to_string(), adj.prompts, adj.params).map_err(|e| e.to_string())?;
    let body = adj.gateway.submit(&request).and_then(|r| r.into_body()).map_err(|e| e.to_string())?;
    let (inner, _) = strip_code_fence(&body);
    let v: Value = serde_json::from_str(inner.trim()).map_err(|e| format!("unparsable adjudication reply: {e}"))?;
    match v.get("choice") {
        Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(i) if (i as usize) < cands.len() => Ok(Some(i as usize)),
            _ => Err(format!("adjudication choice {n} out of range")),
        },
        _ => Err("adjudication reply has no choice".into()),
    }
}

/// Picks one row per source. Without a model, or when the model call fails,
/// the first candidate wins (exact before fuzzy, higher ratio, earlier row).
/// With a model, sources with two or more candidates, or only fuzzy ones, are
/// decided by the model. Returns warnings for degraded model calls.
pub fn adjudicate(
    anchor: &SourceRow,
    candidates: &[SourceCandidates],
    adjudicator: Option<&Adjudicator<'_>>,
) -> (MappingRow, Vec<String>) {
    let mut warnings = Vec::new();
    let mut matches = Vec::with_capacity(candidates.len());
    for sc in candidates {
        let cands = &sc.candidates;
        let ambiguous = cands.len() >= 2 || (!cands.is_empty() && cands.iter().all(|c| c.kind == MatchKind::Fuzzy));
        if let (true, Some(adj)) = (ambiguous, adjudicator) {
            match ask_model(adj, anchor, cands) {
                Ok(choice) => {
                    matches.push(SourceMatch {
                        source_id: sc.source_id.clone(),
                        status: if choice.is_some() { MatchStatus::Llm } else { MatchStatus::None },
                        row: choice.map(|i| cands[i].row.clone()),
                    });
                    continue;
                }
                Err(e) => {
                    warnings.push(format!("{} / {}: {e}; using deterministic choice", anchor.headword, sc.source_id))
                }
            }
        }
        matches.push(match cands.first() {
            Some(c) => SourceMatch {
                source_id: sc.source_id.clone(),
                status: match c.kind {
                    MatchKind::Exact => MatchStatus::Exact,
                    MatchKind::Fuzzy => MatchStatus::Fuzzy,
                },
                row: Some(c.row.clone()),
            },
            None => SourceMatch { source_id: sc.source_id.clone(), status: MatchStatus::None, row: None },
        });
    }
    (MappingRow { anchor: anchor.clone(), matches }, warnings)
}

/// Maps every anchor row against the other sources.
pub fn map_sources(
    anchor: &SourceSet,
    others: &[SourceSet],
    threshold: f64,
    adjudicator: Option<&Adjudicator<'_>>,
) -> (Vec<MappingRow>, Vec<String>) {
    let mut rows = Vec::with_capacity(anchor.rows.len());
    let mut warnings = Vec::new();
    for a in &anchor.rows {
        let cands = candidate_matches(a, others, threshold);
        let (row, w) = adjudicate(a, &cands, adjudicator);
        rows.push(row);
        warnings.extend(w);
    }
    (rows, warnings)
}

/// Mapping table with anchor columns, then for each source its headword,
/// equivalent, extra columns and match status.
pub fn mapping_csv(rows: &[MappingRow], anchor_id: &str, sources: &[SourceSet]) -> String {
    let mut header = vec![format!("{anchor_id}_headword"), format!("{anchor_id}_equivalent")];
    for s in sources {
        header.push(format!("{}_headword", s.source_id));
        header.push(format!("{}_equivalent", s.source_id));
        header.extend(s.extra_columns.iter().map(|c| format!("{}_{c}", s.source_id)));
        header.push(format!("{}_status", s.source_id));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        let mut rec = vec![r.anchor.headword.clone(), r.anchor.equivalent.clone()];
        for s in sources {
            let m = r.matches.iter().find(|m| m.source_id == s.source_id);
            let row = m.and_then(|m| m.row.as_ref());
            rec.push(row.map(|x| x.headword.clone()).unwrap_or_default());
            rec.push(row.map(|x| x.equivalent.clone()).unwrap_or_default());
            for c in &s.extra_columns {
                rec.push(row.and_then(|x| x.extra.get(c).cloned()).unwrap_or_default());
            }
            rec.push(m.map_or(MatchStatus::None, |m| m.status).as_str().to_string());
        }
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentRow {
    pub old_et: String,
    pub modern_et: String,
    pub old_de: String,
    pub modern_de: String,
    pub comment: String,
}

impl EnrichmentRow {
    pub fn parse_failed(old_et: &str, old_de: &str) -> Self {
        Self {
            old_et: old_et.into(),
            modern_et: String::new(),
            old_de: old_de.into(),
            modern_de: String::new(),
            comment: PARSE_FAILED.into(),
        }
    }

    pub fn is_parse_failed(&self) -> bool {
        self.comment == PARSE_FAILED
    }
}

pub fn enrichment_csv(rows: &[EnrichmentRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(["old_et", "modern_et", "old_de", "modern_de", "comment"]).expect("in-memory csv");
    for r in rows {
        w.write_record([&r.old_et, &r.modern_et, &r.old_de, &r.modern_de, &r.comment]).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// Task data for one enrichment batch: each anchor row with the matched
/// rows of the other sources as context.
pub fn enrichment_batch_data(batch: &[MappingRow]) -> String {
    let items: Vec<Value> = batch
        .iter()
        .map(|r| {
            let context: serde_json::Map<String, Value> = r
                .matches
                .iter()
                .filter_map(|m| {
                    m.row.as_ref().map(|row| {
                        (
                            m.source_id.clone(),
                            json!({"headword": row.headword, "equivalent": row.equivalent, "extra": row.extra}),
                        )
                    })
                })
                .collect();
            json!({"old_et": r.anchor.headword, "old_de": r.anchor.equivalent, "context": context})
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("batch serialises")
}

pub fn enrichment_request(
    batch: &[MappingRow],
    prompts: &PromptLibrary,
    params: &ModelParams,
) -> Result<crate::gateway::VisionRequest, GatewayError> {
    build_text_request("enrich", &enrichment_batch_data(batch), prompts, params)
}

fn text_of(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s.trim().to_string()),
        None | Some(Value::Null) => Some(String::new()),
        _ => None,
    }
}

/// Reads one batch reply. Rows that can not be read come back as
/// [`PARSE_FAILED`] rows; the old forms always come from the input.
pub fn parse_enrichment_reply(body: &str, batch: &[MappingRow]) -> Vec<EnrichmentRow> {
    let (inner, _) = strip_code_fence(body);
    let items = match serde_json::from_str::<Value>(inner.trim()) {
        Ok(Value::Array(items)) => items,
        Ok(obj @ Value::Object(_)) if batch.len() == 1 => vec![obj],
        _ => Vec::new(),
    };
    batch
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (old_et, old_de) = (&r.anchor.headword, &r.anchor.equivalent);
            let Some(Value::Object(obj)) = items.get(i) else {
                return EnrichmentRow::parse_failed(old_et, old_de);
            };
            match (text_of(obj, "modern_et"), text_of(obj, "modern_de"), text_of(obj, "comment")) {
                (Some(me), Some(md), Some(c)) if !me.is_empty() || !md.is_empty() => EnrichmentRow {
                    old_et: old_et.clone(),
                    modern_et: me,
                    old_de: old_de.clone(),
                    modern_de: md,
                    comment: c,
                },
                _ => EnrichmentRow::parse_failed(old_et, old_de),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    index: usize,
    row: EnrichmentRow,
}

fn load_checkpoint(path: &Path) -> Result<BTreeMap<usize, EnrichmentRow>, EnrichError> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = std::fs::read_to_string(path)?;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CheckpointLine>(line) {
            Ok(c) => {
                done.insert(c.index, c.row);
            }
            Err(_) if !text.ends_with('\n') && n + 1 == text.lines().count() => break,
            Err(e) => return Err(EnrichError::Checkpoint(format!("{}:{}: {e}", path.display(), n + 1))),
        }
    }
    Ok(done)
}

/// Enriches mapping rows batch by batch. With a checkpoint file, finished
/// rows are appended after each batch and skipped on the next run, so a
/// failed run can be resumed.
pub fn enrich(
    rows: &[MappingRow],
    gateway: &Gateway,
    prompts: &PromptLibrary,
    params: &ModelParams,
    batch_size: usize,
    checkpoint: Option<&Path>,
) -> Result<Vec<EnrichmentRow>, EnrichError> {
    if batch_size == 0 {
        return Err(EnrichError::BatchSize);
    }
    let mut done = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => BTreeMap::new(),
    };
    for (b, batch) in rows.chunks(batch_size).enumerate() {
        let start = b * batch_size;
        if (start..start + batch.len()).all(|i| done.contains_key(&i)) {
            continue;
        }
        let request = enrichment_request(batch, prompts, params).map_err(|source| EnrichError::Gateway {
            batch: b,
            completed: done.len(),
            source,
        })?;
        let body = match gateway.submit(&request) {
            Ok(r) => r.body,
            Err(source) => return Err(EnrichError::Gateway { batch: b, completed: done.len(), source }),
        };
        let parsed = parse_enrichment_reply(&body, batch);
        let mut lines = String::new();
        for (k, row) in parsed.into_iter().enumerate() {
            let line = CheckpointLine { index: start + k, row };
            lines.push_str(&serde_json::to_string(&line).expect("checkpoint serialises"));
            lines.push('\n');
            done.insert(line.index, line.row);
        }
        if let Some(p) = checkpoint {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            f.write_all(lines.as_bytes())?;
            f.sync_data()?;
        }
    }
    Ok((0..rows.len()).map(|i| done.remove(&i).expect("every row enriched")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageLabel {
    Correct,
    MinorEdit,
    FullRevision,
}

impl std::str::FromStr for TriageLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "correct" => Ok(TriageLabel::Correct),
            "minor_edit" | "minor" => Ok(TriageLabel::MinorEdit),
            "full_revision" | "revision" => Ok(TriageLabel::FullRevision),
            other => Err(format!("unknown triage label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageStats {
    pub total: usize,
    pub correct: usize,
    pub minor_edit: usize,
    pub full_revision: usize,
    /// Percentages rounded half-up to one decimal.
    pub correct_pct: f64,
    pub minor_edit_pct: f64,
    pub full_revision_pct: f64,
}

fn tenths_pct(count: usize, total: usize) -> f64 {
    ((1000 * count + total / 2) / total) as f64 / 10.0
}

pub fn triage_stats(labels: &[TriageLabel]) -> Result<TriageStats, EnrichError> {
    if labels.is_empty() {
        return Err(EnrichError::EmptyInput);
    }
    let count = |l: TriageLabel| labels.iter().filter(|x| **x == l).count();
    let (c, m, f, n) =
        (count(TriageLabel::Correct), count(TriageLabel::MinorEdit), count(TriageLabel::FullRevision), labels.len());
    Ok(TriageStats {
        total: n,
        correct: c,
        minor_edit: m,
        full_revision: f,
        correct_pct: tenths_pct(c, n),
        minor_edit_pct: tenths_pct(m, n),
        full_revision_pct: tenths_pct(f, n),
    })
}

/// Reads triage labels from the `label` column of a CSV.
pub fn import_triage_csv(text: &str) -> Result<Vec<TriageLabel>, EnrichError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let col = reader.headers()?.iter().position(|h| h.trim() == "label").ok_or_else(|| EnrichError::Source {
        source_id: "triage".into(),
        message: "missing column \"label\"".into(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(col).unwrap_or("");
        let label = raw
            .parse()
            .map_err(|e| EnrichError::Source { source_id: "triage".into(), message: format!("row {}: {e}", i + 1) })?;
        out.push(label);
    }
    Ok(out)
}

/// Distinct normalised keys of a source, for diagnostics.
pub fn source_keys(set: &SourceSet) -> BTreeSet<String> {
    set.rows.iter().map(|r| normalize_form(&r.headword, Lang::Et)).collect()
}
