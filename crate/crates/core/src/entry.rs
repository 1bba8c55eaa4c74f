//! Nine-field dictionary entries and their JSON payload / CSV forms.
//!
//! The nine content fields are fixed machine names:
//! `headword_et`, `synonyms_et`, `equivalent_de`, `synonyms_de`,
//! `explanation_la`, `part_of_speech`, `grammar_info`, `mwe_et`, `mwe_de`.
//! Four of them are sequence-valued (synonyms and multiword units on each
//! language side).

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Separator used when a sequence-valued field is flattened into one CSV cell.
pub const JOIN_TOKEN: &str = "; ";

/// Content field names in canonical order.
pub const FIELD_NAMES: [&str; 9] = [
    "headword_et",
    "synonyms_et",
    "equivalent_de",
    "synonyms_de",
    "explanation_la",
    "part_of_speech",
    "grammar_info",
    "mwe_et",
    "mwe_de",
];

/// Provenance column names appended after the content fields in CSV output.
pub const PROVENANCE_NAMES: [&str; 5] = ["source_id", "page", "column", "segment", "order_on_page"];

/// Which structured format a payload or document uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    /// JSON array of flat nine-field objects.
    NineField,
    /// Constrained TEI Lex-0 subset.
    TeiSubset,
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemaId::NineField => "nine_field",
            SchemaId::TeiSubset => "tei_subset",
        })
    }
}

/// Segment of a column an entry was recognised from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Segment {
    /// The tile covered the whole column (or page).
    #[default]
    Whole,
    Index(u32),
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Whole => f.write_str("whole"),
            Segment::Index(i) => write!(f, "{i}"),
        }
    }
}

impl std::str::FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("whole") {
            return Ok(Segment::Whole);
        }
        s.parse::<u32>()
            .map(Segment::Index)
            .map_err(|_| format!("segment must be \"whole\" or a non-negative integer, got {s:?}"))
    }
}

impl Serialize for Segment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Segment::Whole => serializer.serialize_str("whole"),
            Segment::Index(i) => serializer.serialize_u32(*i),
        }
    }
}

impl<'de> Deserialize<'de> for Segment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(n) => Ok(Segment::Index(n)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Where an entry came from within one recognition run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntryProvenance {
    pub source_id: String,
    /// 1-based page number.
    pub page: u32,
    /// 1 or 2.
    pub column: u8,
    pub segment: Segment,
    pub order_on_page: u32,
}

impl Default for EntryProvenance {
    fn default() -> Self {
        Self { source_id: String::new(), page: 1, column: 1, segment: Segment::Whole, order_on_page: 0 }
    }
}

/// One headword article.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub headword_et: String,
    #[serde(default)]
    pub synonyms_et: Vec<String>,
    #[serde(default)]
    pub equivalent_de: String,
    #[serde(default)]
    pub synonyms_de: Vec<String>,
    #[serde(default)]
    pub explanation_la: String,
    #[serde(default)]
    pub part_of_speech: String,
    #[serde(default)]
    pub grammar_info: String,
    #[serde(default)]
    pub mwe_et: Vec<String>,
    #[serde(default)]
    pub mwe_de: Vec<String>,
    #[serde(default)]
    pub provenance: EntryProvenance,
}

impl DictionaryEntry {
    pub fn new(headword_et: impl Into<String>, equivalent_de: impl Into<String>) -> Self {
        Self { headword_et: headword_et.into(), equivalent_de: equivalent_de.into(), ..Default::default() }
    }

    /// Content fields in canonical order, sequences joined with [`JOIN_TOKEN`].
    pub fn field_values(&self) -> [String; 9] {
        [
            self.headword_et.clone(),
            self.synonyms_et.join(JOIN_TOKEN),
            self.equivalent_de.clone(),
            self.synonyms_de.join(JOIN_TOKEN),
            self.explanation_la.clone(),
            self.part_of_speech.clone(),
            self.grammar_info.clone(),
            self.mwe_et.join(JOIN_TOKEN),
            self.mwe_de.join(JOIN_TOKEN),
        ]
    }

    /// Number of content fields holding anything.
    pub fn filled_fields(&self) -> usize {
        self.field_values().iter().filter(|v| !v.trim().is_empty()).count()
    }

    /// Equality over the nine content fields, ignoring provenance.
    pub fn same_content(&self, other: &Self) -> bool {
        self.headword_et == other.headword_et
            && self.synonyms_et == other.synonyms_et
            && self.equivalent_de == other.equivalent_de
            && self.synonyms_de == other.synonyms_de
            && self.explanation_la == other.explanation_la
            && self.part_of_speech == other.part_of_speech
            && self.grammar_info == other.grammar_info
            && self.mwe_et == other.mwe_et
            && self.mwe_de == other.mwe_de
    }

    /// All content values joined by single spaces, used for similarity checks.
    pub fn full_text(&self) -> String {
        self.field_values().iter().filter(|v| !v.is_empty()).cloned().collect::<Vec<_>>().join(" ")
    }
}

/// A broken entry invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: ViolationRule,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationRule {
    EmptyHeadword,
    ControlCharacter,
    EmptyMember,
    DuplicateMember,
    InvalidProvenance,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: &str, rule: ViolationRule, message: impl Into<String>) -> Violation {
    Violation { field: field.to_string(), rule, message: message.into() }
}

/// Checks every entry invariant; empty result means the entry is valid.
pub fn validate_entry(entry: &DictionaryEntry) -> Vec<Violation> {
    let mut out = Vec::new();
    if entry.headword_et.trim().is_empty() {
        out.push(violation("headword_et", ViolationRule::EmptyHeadword, "headword is empty"));
    }

    let scalars = [
        ("headword_et", &entry.headword_et),
        ("equivalent_de", &entry.equivalent_de),
        ("explanation_la", &entry.explanation_la),
        ("part_of_speech", &entry.part_of_speech),
        ("grammar_info", &entry.grammar_info),
    ];
    for (name, value) in scalars {
        if value.chars().any(char::is_control) {
            out.push(violation(name, ViolationRule::ControlCharacter, "contains a control character"));
        }
    }

    let sequences = [
        ("synonyms_et", &entry.synonyms_et),
        ("synonyms_de", &entry.synonyms_de),
        ("mwe_et", &entry.mwe_et),
        ("mwe_de", &entry.mwe_de),
    ];
    for (name, members) in sequences {
        for (i, member) in members.iter().enumerate() {
            if member.trim().is_empty() {
                out.push(violation(name, ViolationRule::EmptyMember, format!("member {i} is empty")));
            }
            if member.chars().any(char::is_control) {
                out.push(violation(
                    name,
                    ViolationRule::ControlCharacter,
                    format!("member {i} contains a control character"),
                ));
            }
            if members[..i].contains(member) {
                out.push(violation(
                    name,
                    ViolationRule::DuplicateMember,
                    format!("member {i} ({member:?}) duplicates an earlier member"),
                ));
            }
        }
    }

    let p = &entry.provenance;
    if p.page == 0 {
        out.push(violation("page", ViolationRule::InvalidProvenance, "page numbers start at 1"));
    }
    if !(1..=2).contains(&p.column) {
        out.push(violation("column", ViolationRule::InvalidProvenance, "column must be 1 or 2"));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("malformed payload at byte {offset}: {message}")]
    MalformedPayload { offset: usize, message: String },
    #[error("schema violation in entry {index}: {message}")]
    SchemaViolation { index: usize, message: String },
}

/// Result of parsing a model reply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPayload {
    pub entries: Vec<DictionaryEntry>,
    pub warnings: Vec<String>,
}

/// Strips a single surrounding Markdown code fence, returning the inner text
/// and its byte offset inside `raw`.
pub fn strip_code_fence(raw: &str) -> (&str, usize) {
    let trimmed_start = raw.len() - raw.trim_start().len();
    let body = raw.trim();
    if !body.starts_with("```") {
        return (raw, 0);
    }
    let Some(first_nl) = body.find('\n') else {
        return (raw, 0);
    };
    let inner = &body[first_nl + 1..];
    let Some(close) = inner.rfind("```") else {
        return (raw, 0);
    };
    if !inner[close + 3..].trim().is_empty() {
        return (raw, 0);
    }
    (&inner[..close], trimmed_start + first_nl + 1)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn clean(value: &str) -> String {
    value.nfc().collect::<String>().trim().to_string()
}

fn scalar_field(obj: &Map<String, Value>, key: &str, index: usize) -> Result<String, PayloadError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(clean(s)),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(PayloadError::SchemaViolation {
            index,
            message: format!("field {key} must be text, got {}", type_name(other)),
        }),
    }
}

fn sequence_field(obj: &Map<String, Value>, key: &str, index: usize) -> Result<Vec<String>, PayloadError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => {
            let s = clean(s);
            if s.is_empty() {
                Ok(Vec::new())
            } else {
                Ok(s.split(';').map(clean).collect())
            }
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| match item {
                Value::String(s) => Ok(clean(s)),
                other => Err(PayloadError::SchemaViolation {
                    index,
                    message: format!("members of {key} must be text, got {}", type_name(other)),
                }),
            })
            .collect(),
        Some(other) => Err(PayloadError::SchemaViolation {
            index,
            message: format!("field {key} must be a list of text, got {}", type_name(other)),
        }),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "text",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Parses one object of a nine-field payload. `index` is used in errors.
pub fn entry_from_object(
    obj: &Map<String, Value>,
    index: usize,
) -> Result<(DictionaryEntry, Vec<String>), PayloadError> {
    let mut warnings = Vec::new();
    let headword = match obj.get("headword_et") {
        None | Some(Value::Null) => {
            return Err(PayloadError::SchemaViolation { index, message: "headword_et is missing".into() })
        }
        Some(_) => scalar_field(obj, "headword_et", index)?,
    };
    let entry = DictionaryEntry {
        headword_et: headword,
        synonyms_et: sequence_field(obj, "synonyms_et", index)?,
        equivalent_de: scalar_field(obj, "equivalent_de", index)?,
        synonyms_de: sequence_field(obj, "synonyms_de", index)?,
        explanation_la: scalar_field(obj, "explanation_la", index)?,
        part_of_speech: scalar_field(obj, "part_of_speech", index)?,
        grammar_info: scalar_field(obj, "grammar_info", index)?,
        mwe_et: sequence_field(obj, "mwe_et", index)?,
        mwe_de: sequence_field(obj, "mwe_de", index)?,
        provenance: EntryProvenance { order_on_page: index as u32, ..Default::default() },
    };
    for key in obj.keys() {
        if !FIELD_NAMES.contains(&key.as_str()) {
            warnings.push(format!("entry {index}: unknown key {key:?} ignored"));
        }
    }
    for v in validate_entry(&entry) {
        warnings.push(format!("entry {index}: {v}"));
    }
    Ok((entry, warnings))
}

/// Parses a model reply holding a JSON array of nine-field objects.
///
/// One surrounding code fence is tolerated. Missing optional fields become
/// empty; unknown keys and invariant breaches are reported as warnings.
/// Provenance is left at its default except `order_on_page`, which is the
/// array index; callers fill in the rest.
///
/// Only [`SchemaId::NineField`] is accepted here; TEI replies go through
/// [`crate::tei::parse_tei_fragment`].
pub fn parse_entry_payload(raw: &str, schema: SchemaId) -> Result<ParsedPayload, PayloadError> {
    if schema != SchemaId::NineField {
        return Err(PayloadError::MalformedPayload {
            offset: 0,
            message: format!("schema {schema} is not a JSON entry payload"),
        });
    }
    let (body, base) = strip_code_fence(raw);
    let value: Value = serde_json::from_str(body).map_err(|e| PayloadError::MalformedPayload {
        offset: base + byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Array(items) = value else {
        return Err(PayloadError::MalformedPayload {
            offset: base + (body.len() - body.trim_start().len()),
            message: format!("expected a JSON array of entries, got {}", type_name(&value)),
        });
    };

    let mut out = ParsedPayload::default();
    for (index, item) in items.iter().enumerate() {
        let Value::Object(obj) = item else {
            return Err(PayloadError::SchemaViolation {
                index,
                message: format!("entry must be an object, got {}", type_name(item)),
            });
        };
        let (entry, warnings) = entry_from_object(obj, index)?;
        out.entries.push(entry);
        out.warnings.extend(warnings);
    }
    Ok(out)
}

/// Serialises entries as a nine-field JSON payload (provenance omitted).
pub fn entries_to_payload(entries: &[DictionaryEntry]) -> String {
    let items: Vec<Value> = entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "headword_et": e.headword_et,
                "synonyms_et": e.synonyms_et,
                "equivalent_de": e.equivalent_de,
                "synonyms_de": e.synonyms_de,
                "explanation_la": e.explanation_la,
                "part_of_speech": e.part_of_speech,
                "grammar_info": e.grammar_info,
                "mwe_et": e.mwe_et,
                "mwe_de": e.mwe_de,
            })
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("entry payload is always serialisable")
}

/// Writes entries as RFC 4180 CSV with a header row.
pub fn entries_to_csv(entries: &[DictionaryEntry]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    let header: Vec<&str> = FIELD_NAMES.iter().chain(PROVENANCE_NAMES.iter()).copied().collect();
    writer.write_record(&header).expect("in-memory write");
    for e in entries {
        let mut row: Vec<String> = e.field_values().to_vec();
        let p = &e.provenance;
        row.extend([
            p.source_id.clone(),
            p.page.to_string(),
            p.column.to_string(),
            p.segment.to_string(),
            p.order_on_page.to_string(),
        ]);
        writer.write_record(&row).expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("csv output of UTF-8 input is UTF-8")
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: {message}")]
    BadValue { row: usize, column: String, message: String },
}

fn split_joined(cell: &str) -> Vec<String> {
    if cell.is_empty() {
        Vec::new()
    } else {
        cell.split(JOIN_TOKEN).map(str::to_string).collect()
    }
}

/// Inverse of [`entries_to_csv`]. Values containing [`JOIN_TOKEN`] inside a
/// sequence member do not survive the round trip.
///
/// Lines starting with `#` before the header are skipped, so exports with a
/// coverage banner read back unchanged.
pub fn csv_to_entries(text: &str) -> Result<Vec<DictionaryEntry>, CsvError> {
    let mut text = text;
    while text.starts_with('#') {
        text = text.split_once('\n').map_or("", |(_, rest)| rest);
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, CsvError> {
        headers.iter().position(|h| h == name).ok_or_else(|| CsvError::MissingColumn(name.to_string()))
    };
    let content: Vec<usize> = FIELD_NAMES.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let prov: Vec<Option<usize>> = PROVENANCE_NAMES.iter().map(|n| col(n).ok()).collect();

    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").to_string();
        let bad =
            |column: &str, message: String| CsvError::BadValue { row: row_idx + 1, column: column.into(), message };

        let mut provenance = EntryProvenance { order_on_page: row_idx as u32, ..Default::default() };
        if let Some(i) = prov[0] {
            provenance.source_id = cell(i);
        }
        if let Some(i) = prov[1] {
            provenance.page = cell(i).parse().map_err(|e| bad("page", format!("{e}")))?;
        }
        if let Some(i) = prov[2] {
            provenance.column = cell(i).parse().map_err(|e| bad("column", format!("{e}")))?;
        }
        if let Some(i) = prov[3] {
            provenance.segment = cell(i).parse().map_err(|e| bad("segment", e))?;
        }
        if let Some(i) = prov[4] {
            provenance.order_on_page = cell(i).parse().map_err(|e| bad("order_on_page", format!("{e}")))?;
        }

        out.push(DictionaryEntry {
            headword_et: cell(content[0]),
            synonyms_et: split_joined(&cell(content[1])),
            equivalent_de: cell(content[2]),
            synonyms_de: split_joined(&cell(content[3])),
            explanation_la: cell(content[4]),
            part_of_speech: cell(content[5]),
            grammar_info: cell(content[6]),
            mwe_et: split_joined(&cell(content[7])),
            mwe_de: split_joined(&cell(content[8])),
            provenance,
        });
    }
    Ok(out)
}
