//! A closed subset of TEI Lex-0 for dictionary pages.
//!
//! Allowed elements: `div` (root), `entry` (`xml:id` required), `form`
//! (`type="lemma"`), `orth`, `gramGrp`, `pos`, `gram`, `sense`, `cit`
//! (`type="translation"`, optional `xml:lang`), `quote`, `usg`, `xr`.
//! Anything else is rejected.
//!
//! A `div` may open with bare `sense` elements before its first `entry`.
//! These hold the continuation of an article whose headword lies above the
//! top edge of the tile (or page) the fragment was read from; the merger
//! attaches them to the open article they belong to.

use std::collections::HashSet;
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::entry::{DictionaryEntry, EntryProvenance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeiError {
    #[error("xml syntax error at byte {offset}: {message}")]
    XmlSyntax { offset: usize, message: String },
    #[error("subset violation at <{element}>: {message}")]
    SubsetViolation { element: String, message: String },
}

fn violation(element: &str, message: impl Into<String>) -> TeiError {
    TeiError::SubsetViolation { element: element.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Translation {
    pub quote: String,
    /// `xml:lang` on the enclosing `cit`; absent when not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sense {
    pub translations: Vec<Translation>,
    /// Regional usage marker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usg: Option<String>,
    /// Cross-reference target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xr: Option<String>,
}

impl Sense {
    pub fn translation(quote: impl Into<String>) -> Self {
        Self { translations: vec![Translation { quote: quote.into(), lang: Some("de".into()) }], ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GramGrp {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TeiEntry {
    pub id: String,
    /// Text of the lemma `orth`.
    pub orth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_grp: Option<GramGrp>,
    #[serde(default)]
    pub senses: Vec<Sense>,
}

impl TeiEntry {
    pub fn new(id: impl Into<String>, orth: impl Into<String>) -> Self {
        Self { id: id.into(), orth: orth.into(), ..Default::default() }
    }

    pub fn with_sense(mut self, sense: Sense) -> Self {
        self.senses.push(sense);
        self
    }

    /// An entry whose senses were cut off at a tile's bottom edge.
    pub fn is_open(&self) -> bool {
        self.senses.is_empty()
    }

    /// Same lemma, grammar and senses; the id is ignored.
    pub fn same_content(&self, other: &Self) -> bool {
        self.orth == other.orth && self.gram_grp == other.gram_grp && self.senses == other.senses
    }

    /// Non-empty leaf texts in document order.
    pub fn texts(&self) -> Vec<&str> {
        let mut out = vec![self.orth.as_str()];
        if let Some(g) = &self.gram_grp {
            out.extend(g.pos.as_deref());
            out.extend(g.gram.as_deref());
        }
        for s in &self.senses {
            out.extend(sense_texts(s));
        }
        out
    }

    pub fn full_text(&self) -> String {
        self.texts().join(" ")
    }

    /// Count of populated leaves, used to pick the richer duplicate.
    pub fn filled_fields(&self) -> usize {
        self.texts().iter().filter(|t| !t.is_empty()).count()
    }
}

fn sense_texts(s: &Sense) -> Vec<&str> {
    let mut out: Vec<&str> = s.translations.iter().map(|t| t.quote.as_str()).collect();
    out.extend(s.usg.as_deref());
    out.extend(s.xr.as_deref());
    out
}

/// A page or tile fragment in the TEI subset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TeiDocument {
    /// Senses continuing an article begun before this fragment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leading: Vec<Sense>,
    pub entries: Vec<TeiEntry>,
}

impl TeiDocument {
    pub fn new(entries: Vec<TeiEntry>) -> Self {
        Self { leading: Vec::new(), entries }
    }

    /// Checks the invariants that parsing enforces, for documents built in code.
    pub fn validate(&self) -> Result<(), TeiError> {
        let mut ids = HashSet::new();
        for s in &self.leading {
            validate_sense(s)?;
        }
        for e in &self.entries {
            if e.id.trim().is_empty() || e.id.chars().any(char::is_whitespace) {
                return Err(violation("entry", format!("invalid xml:id {:?}", e.id)));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(violation("entry", format!("duplicate xml:id {:?}", e.id)));
            }
            if e.orth.trim().is_empty() {
                return Err(violation("orth", format!("entry {} has an empty lemma", e.id)));
            }
            if let Some(g) = &e.gram_grp {
                if g.pos.is_none() && g.gram.is_none() {
                    return Err(violation("gramGrp", format!("entry {} has an empty gramGrp", e.id)));
                }
            }
            for s in &e.senses {
                validate_sense(s)?;
            }
        }
        Ok(())
    }

    /// Depth-first pre-order element tokens: the element name followed by its
    /// attributes as `name=value`, sorted by attribute name. The `xml:`
    /// prefix is dropped (`xml:id` becomes `id`). Text is excluded.
    pub fn structure_tokens(&self) -> Vec<String> {
        let mut out = vec!["div".to_string()];
        for s in &self.leading {
            push_sense_tokens(&mut out, s);
        }
        for e in &self.entries {
            out.push(format!("entry id={}", e.id));
            out.push("form type=lemma".into());
            out.push("orth".into());
            if let Some(g) = &e.gram_grp {
                out.push("gramGrp".into());
                if g.pos.is_some() {
                    out.push("pos".into());
                }
                if g.gram.is_some() {
                    out.push("gram".into());
                }
            }
            for s in &e.senses {
                push_sense_tokens(&mut out, s);
            }
        }
        out
    }

    /// Characters of all text nodes in document order.
    pub fn content_chars(&self) -> Vec<char> {
        let mut out = Vec::new();
        for s in &self.leading {
            for t in sense_texts(s) {
                out.extend(t.trim().chars());
            }
        }
        for e in &self.entries {
            for t in e.texts() {
                out.extend(t.trim().chars());
            }
        }
        out
    }
}

fn push_sense_tokens(out: &mut Vec<String>, s: &Sense) {
    out.push("sense".into());
    for t in &s.translations {
        match &t.lang {
            Some(lang) => out.push(format!("cit lang={lang} type=translation")),
            None => out.push("cit type=translation".into()),
        }
        out.push("quote".into());
    }
    if s.usg.is_some() {
        out.push("usg".into());
    }
    if s.xr.is_some() {
        out.push("xr".into());
    }
}

fn validate_sense(s: &Sense) -> Result<(), TeiError> {
    if s.translations.is_empty() {
        return Err(violation("sense", "sense without a translation cit"));
    }
    for t in &s.translations {
        if let Some(lang) = &t.lang {
            if lang.trim().is_empty() {
                return Err(violation("cit", "empty xml:lang"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
}

#[derive(Debug)]
enum Node {
    Element(Element),
    Text(String),
}

fn syntax(offset: u64, message: impl Into<String>) -> TeiError {
    TeiError::XmlSyntax { offset: offset as usize, message: message.into() }
}

fn start_element(reader: &Reader<&[u8]>, e: &BytesStart<'_>) -> Result<Element, TeiError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| syntax(reader.buffer_position(), err.to_string()))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value =
            attr.unescape_value().map_err(|err| syntax(reader.buffer_position(), err.to_string()))?.into_owned();
        attrs.push((key, value));
    }
    Ok(Element { name, attrs, children: Vec::new() })
}

fn read_tree(xml: &str) -> Result<Element, TeiError> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().check_end_names = true;
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| syntax(pos, e.to_string()))?;
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(syntax(pos, "content after the root element"));
                }
                stack.push(start_element(&reader, &e)?);
            }
            Event::Empty(e) => {
                if root.is_some() {
                    return Err(syntax(pos, "content after the root element"));
                }
                let el = start_element(&reader, &e)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None => root = Some(el),
                }
            }
            Event::End(_) => {
                let el = stack.pop().ok_or_else(|| syntax(pos, "unbalanced end tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| syntax(pos, e.to_string()))?.into_owned();
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Text(text)),
                    None if text.trim().is_empty() => {}
                    None => return Err(syntax(pos, "text outside the root element")),
                }
            }
            Event::CData(t) => {
                let text = String::from_utf8_lossy(&t).into_owned();
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Text(text)),
                    None => return Err(syntax(pos, "CDATA outside the root element")),
                }
            }
            Event::DocType(_) => return Err(violation("!DOCTYPE", "document type declarations are not allowed")),
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) => {}
            Event::Eof => break,
        }
    }
    if !stack.is_empty() {
        return Err(syntax(xml.len() as u64, format!("unclosed element <{}>", stack[stack.len() - 1].name)));
    }
    root.ok_or_else(|| syntax(0, "no root element"))
}

impl Element {
    fn check_attrs(&self, allowed: &[&str]) -> Result<(), TeiError> {
        for (k, _) in &self.attrs {
            if k == "xmlns" || k.starts_with("xmlns:") {
                continue;
            }
            if !allowed.contains(&k.as_str()) {
                return Err(violation(&self.name, format!("attribute {k:?} is outside the subset")));
            }
        }
        Ok(())
    }

    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Child elements; non-whitespace text between them is an error.
    fn element_children(&self) -> Result<Vec<&Element>, TeiError> {
        let mut out = Vec::new();
        for child in &self.children {
            match child {
                Node::Element(e) => out.push(e),
                Node::Text(t) if t.trim().is_empty() => {}
                Node::Text(t) => {
                    return Err(violation(&self.name, format!("unexpected text {:?}", t.trim())));
                }
            }
        }
        Ok(out)
    }

    /// Text content of a leaf element, trimmed and NFC-normalised.
    fn leaf_text(&self) -> Result<String, TeiError> {
        let mut text = String::new();
        for child in &self.children {
            match child {
                Node::Text(t) => text.push_str(t),
                Node::Element(e) => {
                    return Err(violation(&e.name, format!("element not allowed inside <{}>", self.name)));
                }
            }
        }
        Ok(text.nfc().collect::<String>().trim().to_string())
    }
}

const ELEMENTS: [&str; 12] =
    ["div", "entry", "form", "orth", "gramGrp", "pos", "gram", "sense", "cit", "quote", "usg", "xr"];

fn unexpected(child: &Element, parent: &str) -> TeiError {
    if ELEMENTS.contains(&child.name.as_str()) {
        violation(&child.name, format!("not allowed inside <{parent}>"))
    } else {
        violation(&child.name, "element is outside the subset")
    }
}

fn convert_sense(el: &Element) -> Result<Sense, TeiError> {
    el.check_attrs(&[])?;
    let mut sense = Sense::default();
    for child in el.element_children()? {
        match child.name.as_str() {
            "cit" => {
                child.check_attrs(&["type", "xml:lang"])?;
                if child.attr("type") != Some("translation") {
                    return Err(violation("cit", "type must be \"translation\""));
                }
                let lang = child.attr("xml:lang").map(str::to_string);
                let inner = child.element_children()?;
                let [quote] = inner.as_slice() else {
                    return Err(violation("cit", "must contain exactly one <quote>"));
                };
                if quote.name != "quote" {
                    return Err(unexpected(quote, "cit"));
                }
                quote.check_attrs(&[])?;
                sense.translations.push(Translation { quote: quote.leaf_text()?, lang });
            }
            "usg" | "xr" => {
                child.check_attrs(&[])?;
                let slot = if child.name == "usg" { &mut sense.usg } else { &mut sense.xr };
                if slot.is_some() {
                    return Err(violation(&child.name, "at most one per sense"));
                }
                *slot = Some(child.leaf_text()?);
            }
            _ => return Err(unexpected(child, "sense")),
        }
    }
    validate_sense(&sense)?;
    Ok(sense)
}

fn convert_entry(el: &Element) -> Result<TeiEntry, TeiError> {
    el.check_attrs(&["xml:id"])?;
    let id = el.attr("xml:id").ok_or_else(|| violation("entry", "missing xml:id"))?.to_string();
    let mut orth: Option<String> = None;
    let mut gram_grp: Option<GramGrp> = None;
    let mut senses = Vec::new();

    for child in el.element_children()? {
        match child.name.as_str() {
            "form" => {
                child.check_attrs(&["type"])?;
                if child.attr("type") != Some("lemma") {
                    return Err(violation("form", "type must be \"lemma\""));
                }
                if orth.is_some() {
                    return Err(violation("form", format!("entry {id} has more than one lemma form")));
                }
                let inner = child.element_children()?;
                let [o] = inner.as_slice() else {
                    return Err(violation("form", "must contain exactly one <orth>"));
                };
                if o.name != "orth" {
                    return Err(unexpected(o, "form"));
                }
                o.check_attrs(&[])?;
                orth = Some(o.leaf_text()?);
            }
            "gramGrp" => {
                child.check_attrs(&[])?;
                if gram_grp.is_some() {
                    return Err(violation("gramGrp", "at most one per entry"));
                }
                let mut g = GramGrp::default();
                for gc in child.element_children()? {
                    gc.check_attrs(&[])?;
                    let slot = match gc.name.as_str() {
                        "pos" => &mut g.pos,
                        "gram" => &mut g.gram,
                        _ => return Err(unexpected(gc, "gramGrp")),
                    };
                    if slot.is_some() {
                        return Err(violation(&gc.name, "at most one per gramGrp"));
                    }
                    *slot = Some(gc.leaf_text()?);
                }
                gram_grp = Some(g);
            }
            "sense" => senses.push(convert_sense(child)?),
            _ => return Err(unexpected(child, "entry")),
        }
    }

    let orth = orth.ok_or_else(|| violation("entry", format!("entry {id} has no lemma form/orth")))?;
    Ok(TeiEntry { id, orth, gram_grp, senses })
}

/// Parses and validates a TEI fragment.
pub fn parse_tei_fragment(xml: &str) -> Result<TeiDocument, TeiError> {
    let root = read_tree(xml)?;
    if root.name != "div" {
        return Err(violation(&root.name, "root element must be <div>"));
    }
    root.check_attrs(&[])?;
    let mut doc = TeiDocument::default();
    for child in root.element_children()? {
        match child.name.as_str() {
            "entry" => doc.entries.push(convert_entry(child)?),
            "sense" if doc.entries.is_empty() => doc.leading.push(convert_sense(child)?),
            "sense" => return Err(violation("sense", "bare senses may only precede the first entry")),
            _ => return Err(unexpected(child, "div")),
        }
    }
    doc.validate()?;
    Ok(doc)
}

/// Parses a model reply that may wrap the XML in a code fence.
pub fn parse_tei_reply(raw: &str) -> Result<TeiDocument, TeiError> {
    let (body, _) = crate::entry::strip_code_fence(raw);
    parse_tei_fragment(body)
}

// ---------------------------------------------------------------------------
// serialisation

fn esc(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

fn write_sense(out: &mut String, s: &Sense, indent: &str) {
    let _ = writeln!(out, "{indent}<sense>");
    for t in &s.translations {
        match &t.lang {
            Some(lang) => {
                let _ = writeln!(out, "{indent}  <cit type=\"translation\" xml:lang=\"{}\">", esc(lang));
            }
            None => {
                let _ = writeln!(out, "{indent}  <cit type=\"translation\">");
            }
        }
        let _ = writeln!(out, "{indent}    <quote>{}</quote>", esc(&t.quote));
        let _ = writeln!(out, "{indent}  </cit>");
    }
    if let Some(u) = &s.usg {
        let _ = writeln!(out, "{indent}  <usg>{}</usg>", esc(u));
    }
    if let Some(x) = &s.xr {
        let _ = writeln!(out, "{indent}  <xr>{}</xr>", esc(x));
    }
    let _ = writeln!(out, "{indent}</sense>");
}

/// Deterministic XML: declaration, two-space indentation, fixed attribute
/// order, `\n` line ends.
pub fn serialize_tei(doc: &TeiDocument) -> String {
    serialize_tei_with_comment(doc, None)
}

/// [`serialize_tei`] with an optional leading XML comment.
pub fn serialize_tei_with_comment(doc: &TeiDocument, comment: Option<&str>) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if let Some(c) = comment {
        let _ = writeln!(out, "<!-- {} -->", c.replace("--", "- -"));
    }
    if doc.leading.is_empty() && doc.entries.is_empty() {
        out.push_str("<div/>\n");
        return out;
    }
    out.push_str("<div>\n");
    for s in &doc.leading {
        write_sense(&mut out, s, "  ");
    }
    for e in &doc.entries {
        let _ = writeln!(out, "  <entry xml:id=\"{}\">", esc(&e.id));
        out.push_str("    <form type=\"lemma\">\n");
        let _ = writeln!(out, "      <orth>{}</orth>", esc(&e.orth));
        out.push_str("    </form>\n");
        if let Some(g) = &e.gram_grp {
            out.push_str("    <gramGrp>\n");
            if let Some(p) = &g.pos {
                let _ = writeln!(out, "      <pos>{}</pos>", esc(p));
            }
            if let Some(gr) = &g.gram {
                let _ = writeln!(out, "      <gram>{}</gram>", esc(gr));
            }
            out.push_str("    </gramGrp>\n");
        }
        for s in &e.senses {
            write_sense(&mut out, s, "    ");
        }
        out.push_str("  </entry>\n");
    }
    out.push_str("</div>\n");
    out
}

// ---------------------------------------------------------------------------
// conversion to and from nine-field entries (lossy in both directions)

/// Maps a TEI article onto the nine-field shape: lemma → `headword_et`,
/// first translation → `equivalent_de`, further translations →
/// `synonyms_de`, `pos`/`gram` → `part_of_speech`/`grammar_info`.
/// Usage labels and cross-references have no nine-field slot and are dropped.
pub fn tei_entry_to_dictionary(entry: &TeiEntry, provenance: EntryProvenance) -> DictionaryEntry {
    let mut quotes: Vec<String> = Vec::new();
    for s in &entry.senses {
        for t in &s.translations {
            if !t.quote.is_empty() && !quotes.contains(&t.quote) {
                quotes.push(t.quote.clone());
            }
        }
    }
    let mut quotes = quotes.into_iter();
    let equivalent_de = quotes.next().unwrap_or_default();
    let (pos, gram) = entry
        .gram_grp
        .as_ref()
        .map(|g| (g.pos.clone().unwrap_or_default(), g.gram.clone().unwrap_or_default()))
        .unwrap_or_default();
    DictionaryEntry {
        headword_et: entry.orth.clone(),
        equivalent_de,
        synonyms_de: quotes.collect(),
        part_of_speech: pos,
        grammar_info: gram,
        provenance,
        ..Default::default()
    }
}

/// Inverse mapping of [`tei_entry_to_dictionary`]; Estonian synonyms, Latin
/// explanations and multiword units have no slot in the subset and are dropped.
pub fn dictionary_to_tei_entry(entry: &DictionaryEntry, id: impl Into<String>) -> TeiEntry {
    let gram_grp = if entry.part_of_speech.is_empty() && entry.grammar_info.is_empty() {
        None
    } else {
        Some(GramGrp {
            pos: Some(entry.part_of_speech.clone()).filter(|s| !s.is_empty()),
            gram: Some(entry.grammar_info.clone()).filter(|s| !s.is_empty()),
        })
    };
    let translations: Vec<Translation> = std::iter::once(&entry.equivalent_de)
        .chain(entry.synonyms_de.iter())
        .filter(|q| !q.is_empty())
        .map(|q| Translation { quote: q.clone(), lang: Some("de".into()) })
        .collect();
    let senses = if translations.is_empty() { Vec::new() } else { vec![Sense { translations, usg: None, xr: None }] };
    TeiEntry { id: id.into(), orth: entry.headword_et.clone(), gram_grp, senses }
}
