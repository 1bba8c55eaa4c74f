//! Accuracy metrics, page scoring and corpus reports.
//!
//! Entries are aligned by position, not by headword. A misplaced but
//! correctly read entry therefore raises the per-field CER while the
//! order-insensitive part of the picture (textual similarity over the whole
//! page) stays high; the report keeps both views side by side.

pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entry::{DictionaryEntry, SchemaId, FIELD_NAMES, JOIN_TOKEN};
use crate::tei::{TeiDocument, TeiEntry};

pub use metrics::{cer, levenshtein, levenshtein_seq, ro_ratio, ro_ratio_str};
pub use report::{aggregate, method_comparison, render_delta, CorpusReport, MethodResult, MethodRow};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("hypothesis and reference use different schemas")]
    SchemaMismatch,
    #[error("no page reports to aggregate")]
    NoReports,
    #[error("baseline row {0} does not exist")]
    NoBaseline(usize),
}

/// Recognised or reference content of one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "schema", content = "content", rename_all = "snake_case")]
pub enum PageContent {
    NineField(Vec<DictionaryEntry>),
    Tei(TeiDocument),
}

impl PageContent {
    pub fn schema(&self) -> SchemaId {
        match self {
            PageContent::NineField(_) => SchemaId::NineField,
            PageContent::Tei(_) => SchemaId::TeiSubset,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PageContent::NineField(e) => e.len(),
            PageContent::Tei(d) => d.entries.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Field names scored for TEI pages.
pub const TEI_FIELDS: [&str; 6] = ["orth", "pos", "gram", "quote", "usg", "xr"];

fn tei_field_values(e: &TeiEntry) -> [String; 6] {
    let g = e.gram_grp.as_ref();
    let quotes: Vec<&str> = e.senses.iter().flat_map(|s| s.translations.iter().map(|t| t.quote.as_str())).collect();
    let usg: Vec<&str> = e.senses.iter().filter_map(|s| s.usg.as_deref()).collect();
    let xr: Vec<&str> = e.senses.iter().filter_map(|s| s.xr.as_deref()).collect();
    [
        e.orth.clone(),
        g.and_then(|g| g.pos.clone()).unwrap_or_default(),
        g.and_then(|g| g.gram.clone()).unwrap_or_default(),
        quotes.join(JOIN_TOKEN),
        usg.join(JOIN_TOKEN),
        xr.join(JOIN_TOKEN),
    ]
}

/// Structure tokens of a nine-field page: `entry`, then the name of each
/// non-empty field.
pub fn nine_field_structure(entries: &[DictionaryEntry]) -> Vec<String> {
    let mut out = Vec::new();
    for e in entries {
        out.push("entry".to_string());
        for (name, value) in FIELD_NAMES.iter().zip(e.field_values()) {
            if !value.trim().is_empty() {
                out.push(name.to_string());
            }
        }
    }
    out
}

pub fn nine_field_content(entries: &[DictionaryEntry]) -> Vec<char> {
    entries.iter().flat_map(|e| e.field_values()).flat_map(|v| v.trim().chars().collect::<Vec<_>>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub page_id: String,
    pub schema: SchemaId,
    /// CER per field; a field is absent when its reference text is empty
    /// and the hypothesis is not.
    pub field_cer: BTreeMap<String, f64>,
    pub structural_similarity: f64,
    pub textual_similarity: f64,
    pub perfect_entries: usize,
    /// Number of reference entries.
    pub total_entries: usize,
    pub hypothesis_entries: usize,
}

impl EvalReport {
    pub fn perfect_rate(&self) -> f64 {
        if self.total_entries == 0 {
            1.0
        } else {
            self.perfect_entries as f64 / self.total_entries as f64
        }
    }

    /// Character-weighted overall CER is not stored; this is the mean of the
    /// per-field values.
    pub fn mean_field_cer(&self) -> Option<f64> {
        (!self.field_cer.is_empty()).then(|| self.field_cer.values().sum::<f64>() / self.field_cer.len() as f64)
    }
}

fn field_cer<const N: usize>(
    names: [&str; N],
    hyp: &[[String; N]],
    reference: &[[String; N]],
) -> BTreeMap<String, f64> {
    let rows = hyp.len().max(reference.len());
    let mut out = BTreeMap::new();
    for (k, name) in names.iter().enumerate() {
        let column = |side: &[[String; N]]| -> Vec<String> {
            (0..rows).map(|i| side.get(i).map(|r| r[k].clone()).unwrap_or_default()).collect()
        };
        let (h, r) = (column(hyp), column(reference));
        if r.iter().all(String::is_empty) {
            if h.iter().all(String::is_empty) {
                out.insert(name.to_string(), 0.0);
            }
            continue;
        }
        let value = cer(&h.join("\n"), &r.join("\n")).expect("reference has content");
        out.insert(name.to_string(), value);
    }
    out
}

/// Scores a hypothesis page against its reference.
pub fn score_page(page_id: &str, hyp: &PageContent, reference: &PageContent) -> Result<EvalReport, EvalError> {
    let (field_cer, structural, textual, perfect) = match (hyp, reference) {
        (PageContent::NineField(h), PageContent::NineField(r)) => {
            let hv: Vec<_> = h.iter().map(DictionaryEntry::field_values).collect();
            let rv: Vec<_> = r.iter().map(DictionaryEntry::field_values).collect();
            (
                field_cer(FIELD_NAMES, &hv, &rv),
                ro_ratio(&nine_field_structure(h), &nine_field_structure(r)),
                ro_ratio(&nine_field_content(h), &nine_field_content(r)),
                h.iter().zip(r).filter(|(a, b)| a.same_content(b)).count(),
            )
        }
        (PageContent::Tei(h), PageContent::Tei(r)) => {
            let hv: Vec<_> = h.entries.iter().map(tei_field_values).collect();
            let rv: Vec<_> = r.entries.iter().map(tei_field_values).collect();
            (
                field_cer(TEI_FIELDS, &hv, &rv),
                ro_ratio(&h.structure_tokens(), &r.structure_tokens()),
                ro_ratio(&h.content_chars(), &r.content_chars()),
                h.entries.iter().zip(&r.entries).filter(|(a, b)| a.same_content(b)).count(),
            )
        }
        _ => return Err(EvalError::SchemaMismatch),
    };
    Ok(EvalReport {
        page_id: page_id.to_string(),
        schema: reference.schema(),
        field_cer,
        structural_similarity: structural,
        textual_similarity: textual,
        perfect_entries: perfect,
        total_entries: reference.len(),
        hypothesis_entries: hyp.len(),
    })
}
