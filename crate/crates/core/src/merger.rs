//! Reassembly of per-tile recognition results into one page.
//!
//! Tiles are visited in plan order. At every boundary between two tiles of
//! the same column that overlap, entries read twice are collapsed: a pair is
//! a duplicate when both the headwords and the full texts reach the
//! similarity threshold, or when the headwords match and one side is an
//! open entry (lemma without senses). The richer reading is kept; ties go to
//! the earlier tile.
//!
//! A fragment may start with senses that continue an article from above.
//! Across an overlapping boundary those already read in the previous tile are
//! dropped and the rest are attached to the last article so far. Across a
//! boundary without overlap (a column change, or `o = 0`) they are always
//! attached. At the top of the page there is nothing to attach to; they are
//! kept as leading material of the page document.

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entry::{DictionaryEntry, Segment};
use crate::eval::metrics::ro_ratio_str;
use crate::gateway::{build_text_request, Gateway, GatewayError, ModelParams, PromptLibrary};
use crate::tei::{parse_tei_reply, serialize_tei, Sense, TeiDocument, TeiEntry};
use crate::tiler::{Tile, TileMode, TilePlan};

pub const DEFAULT_THRESHOLD: f64 = 0.80;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("fragment set is empty")]
    EmptyFragmentSet,
    #[error("expected one fragment per tile ({expected}), got {got}")]
    FragmentMismatch { expected: usize, got: usize },
    #[error("fragment {index} belongs to tile {found:?}, plan has {expected:?}")]
    FragmentOrder { index: usize, expected: (u8, u32), found: (u8, u32) },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// What the merger needs to know about an entry type.
pub trait MergeItem: Clone + std::fmt::Debug + PartialEq {
    /// Material continuing an article from a previous tile.
    type Continuation: Clone + std::fmt::Debug + PartialEq;

    fn headword(&self) -> &str;
    fn full_text(&self) -> String;
    fn filled_fields(&self) -> usize;
    fn is_open(&self) -> bool;
    fn continuation_text(c: &Self::Continuation) -> String;
    /// Texts of the continuation-like parts this entry already holds.
    fn continuation_texts(&self) -> Vec<String>;
    fn attach(&mut self, c: Self::Continuation);
    /// Called once per output entry with its origin and final position.
    fn assign(&mut self, origin: &EntryRef, segment: Segment, order: u32, used_ids: &mut HashSet<String>);
}

impl MergeItem for TeiEntry {
    type Continuation = Sense;

    fn headword(&self) -> &str {
        &self.orth
    }

    fn full_text(&self) -> String {
        TeiEntry::full_text(self)
    }

    fn filled_fields(&self) -> usize {
        TeiEntry::filled_fields(self)
    }

    fn is_open(&self) -> bool {
        TeiEntry::is_open(self)
    }

    fn continuation_text(c: &Sense) -> String {
        sense_text(c)
    }

    fn continuation_texts(&self) -> Vec<String> {
        self.senses.iter().map(sense_text).collect()
    }

    fn attach(&mut self, c: Sense) {
        self.senses.push(c);
    }

    fn assign(&mut self, origin: &EntryRef, _segment: Segment, _order: u32, used_ids: &mut HashSet<String>) {
        if used_ids.insert(self.id.clone()) {
            return;
        }
        let base = format!("{}-{}{}", self.id, origin.column, origin.segment);
        let mut candidate = base.clone();
        let mut n = 2;
        while !used_ids.insert(candidate.clone()) {
            candidate = format!("{base}-{n}");
            n += 1;
        }
        self.id = candidate;
    }
}

fn sense_text(s: &Sense) -> String {
    let mut parts: Vec<&str> = s.translations.iter().map(|t| t.quote.as_str()).collect();
    parts.extend(s.usg.as_deref());
    parts.extend(s.xr.as_deref());
    parts.join(" ")
}

/// Nine-field payloads have no headword-less objects, so they never carry
/// continuation material.
impl MergeItem for DictionaryEntry {
    type Continuation = Infallible;

    fn headword(&self) -> &str {
        &self.headword_et
    }

    fn full_text(&self) -> String {
        DictionaryEntry::full_text(self)
    }

    fn filled_fields(&self) -> usize {
        DictionaryEntry::filled_fields(self)
    }

    fn is_open(&self) -> bool {
        DictionaryEntry::filled_fields(self) <= 1
    }

    fn continuation_text(c: &Infallible) -> String {
        match *c {}
    }

    fn continuation_texts(&self) -> Vec<String> {
        Vec::new()
    }

    fn attach(&mut self, c: Infallible) {
        match c {}
    }

    fn assign(&mut self, origin: &EntryRef, segment: Segment, order: u32, _used_ids: &mut HashSet<String>) {
        self.provenance.column = origin.column + 1;
        self.provenance.segment = segment;
        self.provenance.order_on_page = order;
    }
}

/// Recognition output of one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment<T: MergeItem> {
    pub tile: Tile,
    pub leading: Vec<T::Continuation>,
    pub entries: Vec<T>,
}

impl<T: MergeItem> Fragment<T> {
    pub fn new(tile: Tile, entries: Vec<T>) -> Self {
        Self { tile, leading: Vec::new(), entries }
    }
}

impl Fragment<TeiEntry> {
    pub fn from_document(tile: Tile, doc: TeiDocument) -> Self {
        Self { tile, leading: doc.leading, entries: doc.entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentSet<T: MergeItem> {
    pub plan: TilePlan,
    pub fragments: Vec<Fragment<T>>,
}

impl<T: MergeItem> FragmentSet<T> {
    pub fn new(plan: TilePlan, fragments: Vec<Fragment<T>>) -> Self {
        Self { plan, fragments }
    }

    pub fn page_id(&self) -> &str {
        &self.plan.page_id
    }

    pub fn check(&self) -> Result<(), MergeError> {
        if self.fragments.is_empty() {
            return Err(MergeError::EmptyFragmentSet);
        }
        if self.fragments.len() != self.plan.tiles.len() {
            return Err(MergeError::FragmentMismatch { expected: self.plan.tiles.len(), got: self.fragments.len() });
        }
        for (index, (f, t)) in self.fragments.iter().zip(&self.plan.tiles).enumerate() {
            if f.tile.column_index != t.column_index || f.tile.segment_index != t.segment_index {
                return Err(MergeError::FragmentOrder {
                    index,
                    expected: (t.column_index, t.segment_index),
                    found: (f.tile.column_index, f.tile.segment_index),
                });
            }
        }
        Ok(())
    }
}

/// Position of an input entry: tile index in plan order, and index within
/// that tile's fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntryRef {
    pub tile: usize,
    pub column: u8,
    pub segment: u32,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Kept,
    DroppedDuplicate,
    Stitched,
}

/// What a decision is about: an input entry, or one leading sense of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Subject {
    Entry(EntryRef),
    Continuation { tile: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub kind: DecisionKind,
    pub subject: Subject,
    /// Tile indices involved.
    pub sources: Vec<usize>,
    /// The surviving entry, for drops and stitches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keeper: Option<EntryRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headword_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_similarity: Option<f64>,
}

impl MergeDecision {
    fn kept(r: EntryRef) -> Self {
        Self {
            kind: DecisionKind::Kept,
            subject: Subject::Entry(r),
            sources: vec![r.tile],
            keeper: None,
            headword_similarity: None,
            text_similarity: None,
        }
    }
}

/// Writes decisions as one JSON object per line.
pub fn decisions_to_jsonl(decisions: &[MergeDecision]) -> String {
    decisions.iter().map(|d| serde_json::to_string(d).expect("decision serialises") + "\n").collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedPage<T: MergeItem> {
    pub entries: Vec<T>,
    /// Origin of each output entry, parallel to `entries`.
    pub origins: Vec<EntryRef>,
    /// Continuation material at the top of the page.
    pub leading: Vec<T::Continuation>,
    pub decisions: Vec<MergeDecision>,
}

impl MergedPage<TeiEntry> {
    pub fn to_document(&self) -> TeiDocument {
        TeiDocument { leading: self.leading.clone(), entries: self.entries.clone() }
    }
}

/// A duplicate pair `(tail index, head index)` with its similarities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicatePair {
    pub tail: usize,
    pub head: usize,
    pub headword_similarity: f64,
    pub text_similarity: f64,
}

/// Similarities of a candidate pair, or `None` when it is not a duplicate.
pub fn duplicate_score<T: MergeItem>(a: &T, b: &T, threshold: f64) -> Option<(f64, f64)> {
    let hw = ro_ratio_str(a.headword(), b.headword());
    if hw < threshold {
        return None;
    }
    let text = ro_ratio_str(&a.full_text(), &b.full_text());
    (text >= threshold || a.is_open() || b.is_open()).then_some((hw, text))
}

/// Duplicates between the entries at the bottom of one tile and the top of
/// the next, matched monotonically (no crossing pairs), maximising the
/// number of pairs. Among equally long matchings the one using later tail
/// entries and earlier head entries wins.
pub fn dedupe_pair<T: MergeItem>(tail: &[T], head: &[T], threshold: f64) -> Vec<DuplicatePair> {
    let (n, m) = (tail.len(), head.len());
    let score: Vec<Vec<Option<(f64, f64)>>> =
        tail.iter().map(|a| head.iter().map(|b| duplicate_score(a, b, threshold)).collect()).collect();
    // best[i][j]: max pairs using tail[i..] and head[j..]
    let mut best = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let skip = best[i + 1][j].max(best[i][j + 1]);
            let take = if score[i][j].is_some() { best[i + 1][j + 1] + 1 } else { 0 };
            best[i][j] = skip.max(take);
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if best[i + 1][j] == best[i][j] {
            i += 1;
        } else if let (Some((hw, text)), true) = (score[i][j], best[i + 1][j + 1] + 1 == best[i][j]) {
            out.push(DuplicatePair { tail: i, head: j, headword_similarity: hw, text_similarity: text });
            i += 1;
            j += 1;
        } else {
            j += 1;
        }
    }
    out
}

struct Slot<T> {
    item: T,
    origin: EntryRef,
    decision: usize,
}

/// Deterministic merge. See the module docs for the rules.
pub fn merge_fragments<T: MergeItem>(set: &FragmentSet<T>, threshold: f64) -> Result<MergedPage<T>, MergeError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MergeError::Threshold(threshold));
    }
    set.check()?;

    let mut slots: Vec<Slot<T>> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut decisions: Vec<MergeDecision> = Vec::new();
    let mut leading: Vec<T::Continuation> = Vec::new();
    // slot index for every entry of the previous tile
    let mut prev_tile_slots: Vec<usize> = Vec::new();
    let mut prev_tile: Option<usize> = None;

    for (t, frag) in set.fragments.iter().enumerate() {
        let tile = &frag.tile;
        let overlapping = prev_tile
            .is_some_and(|p| set.fragments[p].tile.column_index == tile.column_index && tile.overlap_above_px > 0);

        // leading continuation material
        for (k, cont) in frag.leading.iter().enumerate() {
            let subject = Subject::Continuation { tile: t, index: k };
            let Some(&last) = order.last() else {
                leading.push(cont.clone());
                decisions.push(MergeDecision {
                    kind: DecisionKind::Kept,
                    subject,
                    sources: vec![t],
                    keeper: None,
                    headword_similarity: None,
                    text_similarity: None,
                });
                continue;
            };
            let text = T::continuation_text(cont);
            let seen = if overlapping {
                prev_tile_slots
                    .iter()
                    .flat_map(|&s| slots[s].item.continuation_texts().into_iter().map(move |x| (s, x)))
                    .map(|(s, x)| (s, ro_ratio_str(&x, &text)))
                    .filter(|&(_, r)| r >= threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1))
            } else {
                None
            };
            match seen {
                Some((s, r)) => decisions.push(MergeDecision {
                    kind: DecisionKind::DroppedDuplicate,
                    subject,
                    sources: vec![slots[s].origin.tile, t],
                    keeper: Some(slots[s].origin),
                    headword_similarity: None,
                    text_similarity: Some(r),
                }),
                None => {
                    let slot = &mut slots[last];
                    slot.item.attach(cont.clone());
                    if decisions[slot.decision].kind == DecisionKind::Kept {
                        decisions[slot.decision].kind = DecisionKind::Stitched;
                    }
                    if !decisions[slot.decision].sources.contains(&t) {
                        decisions[slot.decision].sources.push(t);
                    }
                    decisions.push(MergeDecision {
                        kind: DecisionKind::Stitched,
                        subject,
                        sources: vec![slot.origin.tile, t],
                        keeper: Some(slot.origin),
                        headword_similarity: None,
                        text_similarity: None,
                    });
                }
            }
        }

        let refs: Vec<EntryRef> = (0..frag.entries.len())
            .map(|index| EntryRef { tile: t, column: tile.column_index, segment: tile.segment_index, index })
            .collect();

        if !overlapping || prev_tile_slots.is_empty() {
            let mut mine = Vec::with_capacity(frag.entries.len());
            for (e, r) in frag.entries.iter().zip(&refs) {
                decisions.push(MergeDecision::kept(*r));
                slots.push(Slot { item: e.clone(), origin: *r, decision: decisions.len() - 1 });
                order.push(slots.len() - 1);
                mine.push(slots.len() - 1);
            }
            prev_tile_slots = mine;
            prev_tile = Some(t);
            continue;
        }

        let tail: Vec<T> = prev_tile_slots.iter().map(|&s| slots[s].item.clone()).collect();
        let pairs = dedupe_pair(&tail, &frag.entries, threshold);
        let mut mine: Vec<Option<usize>> = vec![None; frag.entries.len()];
        for p in &pairs {
            let s = prev_tile_slots[p.tail];
            let b = &frag.entries[p.head];
            let b_ref = refs[p.head];
            mine[p.head] = Some(s);
            if b.filled_fields() > slots[s].item.filled_fields() {
                // the later reading is richer: it takes over the slot
                let old_ref = slots[s].origin;
                let old_decision = slots[s].decision;
                let was_stitched = decisions[old_decision].kind == DecisionKind::Stitched;
                decisions[old_decision] = MergeDecision {
                    kind: DecisionKind::DroppedDuplicate,
                    subject: Subject::Entry(old_ref),
                    sources: vec![old_ref.tile, t],
                    keeper: Some(b_ref),
                    headword_similarity: Some(p.headword_similarity),
                    text_similarity: Some(p.text_similarity),
                };
                for d in decisions.iter_mut() {
                    if d.keeper == Some(old_ref) {
                        d.keeper = Some(b_ref);
                    }
                }
                let mut keep = MergeDecision::kept(b_ref);
                if was_stitched {
                    keep.kind = DecisionKind::Stitched;
                }
                decisions.push(keep);
                slots[s] = Slot { item: b.clone(), origin: b_ref, decision: decisions.len() - 1 };
            } else {
                decisions.push(MergeDecision {
                    kind: DecisionKind::DroppedDuplicate,
                    subject: Subject::Entry(b_ref),
                    sources: vec![slots[s].origin.tile, t],
                    keeper: Some(slots[s].origin),
                    headword_similarity: Some(p.headword_similarity),
                    text_similarity: Some(p.text_similarity),
                });
            }
        }

        // place unmatched entries next to their matched neighbours
        let mut before: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut after: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut at_end: Vec<usize> = Vec::new();
        for j in 0..frag.entries.len() {
            if mine[j].is_some() {
                continue;
            }
            decisions.push(MergeDecision::kept(refs[j]));
            slots.push(Slot { item: frag.entries[j].clone(), origin: refs[j], decision: decisions.len() - 1 });
            let new = slots.len() - 1;
            mine[j] = Some(new);
            let prev_match = pairs.iter().rev().find(|p| p.head < j).map(|p| prev_tile_slots[p.tail]);
            let next_match = pairs.iter().find(|p| p.head > j).map(|p| prev_tile_slots[p.tail]);
            match (prev_match, next_match) {
                (Some(s), _) => after.entry(s).or_default().push(new),
                (None, Some(s)) => before.entry(s).or_default().push(new),
                (None, None) => at_end.push(new),
            }
        }
        let mut reordered = Vec::with_capacity(order.len() + frag.entries.len());
        for &s in &order {
            reordered.extend(before.remove(&s).unwrap_or_default());
            reordered.push(s);
            reordered.extend(after.remove(&s).unwrap_or_default());
        }
        reordered.extend(at_end);
        order = reordered;

        prev_tile_slots = mine.into_iter().map(|s| s.expect("every head entry placed")).collect();
        prev_tile = Some(t);
    }

    let mut used_ids = HashSet::new();
    let mut entries = Vec::with_capacity(order.len());
    let mut origins = Vec::with_capacity(order.len());
    for (pos, &s) in order.iter().enumerate() {
        let slot = &slots[s];
        let mut item = slot.item.clone();
        let segment = match set.plan.mode {
            TileMode::Segments => Segment::Index(slot.origin.segment),
            _ => Segment::Whole,
        };
        item.assign(&slot.origin, segment, pos as u32, &mut used_ids);
        entries.push(item);
        origins.push(slot.origin);
    }
    Ok(MergedPage { entries, origins, leading, decisions })
}

/// Result of [`llm_merge`].
#[derive(Debug, Clone, PartialEq)]
pub struct LlmMergeOutcome {
    pub document: TeiDocument,
    /// Why the deterministic merge was used instead, if it was.
    pub fallback: Option<String>,
    /// Decisions of the deterministic merge when it was used.
    pub decisions: Vec<MergeDecision>,
    pub request_id: String,
}

/// Serialises the fragments in plan order as input for a merging model.
pub fn fragments_prompt_data(set: &FragmentSet<TeiEntry>) -> String {
    let mut out = String::new();
    for f in &set.fragments {
        let doc = TeiDocument { leading: f.leading.clone(), entries: f.entries.clone() };
        out.push_str(&format!(
            "<!-- column {} segment {} -->\n{}\n",
            f.tile.column_index,
            f.tile.segment_index,
            serialize_tei(&doc).trim_start_matches("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n").trim_end()
        ));
    }
    out
}

/// Asks a model to merge the fragments. An unparsable or out-of-subset reply,
/// or a refusal, falls back to [`merge_fragments`]; other gateway errors
/// propagate.
pub fn llm_merge(
    set: &FragmentSet<TeiEntry>,
    gateway: &Gateway,
    prompts: &PromptLibrary,
    prompt_asset_id: &str,
    params: &ModelParams,
    threshold: f64,
) -> Result<LlmMergeOutcome, MergeError> {
    set.check()?;
    let request = build_text_request(prompt_asset_id, &fragments_prompt_data(set), prompts, params)?;
    let response = gateway.submit(&request)?;
    let reason = match response.into_body() {
        Ok(body) => match parse_tei_reply(&body).and_then(|d| d.validate().map(|_| d)) {
            Ok(document) => {
                return Ok(LlmMergeOutcome {
                    document,
                    fallback: None,
                    decisions: Vec::new(),
                    request_id: request.request_id,
                })
            }
            Err(e) => e.to_string(),
        },
        Err(GatewayError::RefusalDetected { text, .. }) => format!("model refused: {text}"),
        Err(e) => return Err(e.into()),
    };
    let merged = merge_fragments(set, threshold)?;
    Ok(LlmMergeOutcome {
        document: merged.to_document(),
        fallback: Some(reason),
        decisions: merged.decisions,
        request_id: request.request_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiler::{plan_tiles_dims, TilingSpec};

    fn plan(n: u32, o: f64) -> TilePlan {
        let spec = TilingSpec { segments_per_column: n, overlap_fraction: o, ..Default::default() };
        plan_tiles_dims("p", 1000, 2400, &spec).unwrap()
    }

    fn e(id: &str, orth: &str, quote: &str) -> TeiEntry {
        TeiEntry::new(id, orth).with_sense(Sense::translation(quote))
    }

    fn set(plan: TilePlan, frags: Vec<(Vec<Sense>, Vec<TeiEntry>)>) -> FragmentSet<TeiEntry> {
        let fragments = plan
            .tiles
            .iter()
            .zip(frags)
            .map(|(t, (leading, entries))| Fragment { tile: *t, leading, entries })
            .collect();
        FragmentSet::new(plan, fragments)
    }

    fn orths(page: &MergedPage<TeiEntry>) -> Vec<&str> {
        page.entries.iter().map(|e| e.orth.as_str()).collect()
    }

    #[test]
    fn exact_duplicate_in_overlap() {
        let mut p = plan(2, 0.25);
        p.tiles.truncate(2);
        let s = set(
            p,
            vec![
                (vec![], vec![e("a", "aus", "ehrbar"), e("b", "ärra", "weg")]),
                (vec![], vec![e("c", "ärra", "weg"), e("d", "wop", "Ahle")]),
            ],
        );
        let m = merge_fragments(&s, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(orths(&m), vec!["aus", "ärra", "wop"]);
        let dropped: Vec<_> = m.decisions.iter().filter(|d| d.kind == DecisionKind::DroppedDuplicate).collect();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].subject, Subject::Entry(EntryRef { tile: 1, column: 0, segment: 1, index: 0 }));
        assert_eq!(dropped[0].keeper, Some(EntryRef { tile: 0, column: 0, segment: 0, index: 1 }));
    }

    #[test]
    fn zero_overlap_is_concatenation() {
        let p = plan(2, 0.0);
        let frags = vec![
            (vec![], vec![e("a", "x", "1")]),
            (vec![], vec![e("b", "x", "1")]),
            (vec![], vec![e("c", "y", "2")]),
            (vec![], vec![e("d", "z", "3")]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(orths(&m), vec!["x", "x", "y", "z"]);
        assert!(m.decisions.iter().all(|d| d.kind == DecisionKind::Kept));
    }

    #[test]
    fn open_entry_is_stitched() {
        let p = plan(2, 0.0);
        let frags = vec![
            (vec![], vec![e("a", "aus", "ehrbar"), TeiEntry::new("b", "wop")]),
            (vec![Sense::translation("Ahle")], vec![e("c", "wõtma", "nehmen")]),
            (vec![], vec![]),
            (vec![], vec![]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        let expected = vec![e("a", "aus", "ehrbar"), e("b", "wop", "Ahle"), e("c", "wõtma", "nehmen")];
        assert_eq!(m.entries, expected);
        assert!(m.leading.is_empty());
        let stitched = m.decisions.iter().filter(|d| d.kind == DecisionKind::Stitched).count();
        assert_eq!(stitched, 2);
    }

    #[test]
    fn open_entry_replaced_by_complete_reading() {
        let mut p = plan(2, 0.25);
        p.tiles.truncate(2);
        let frags = vec![
            (vec![], vec![e("a", "aus", "ehrbar"), TeiEntry::new("b", "wop")]),
            (vec![], vec![e("c", "wop", "Ahle"), e("d", "wõtma", "nehmen")]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(orths(&m), vec!["aus", "wop", "wõtma"]);
        assert_eq!(m.entries[1].senses.len(), 1);
        assert_eq!(m.entries[1].id, "c");
    }

    #[test]
    fn overlapping_continuation_already_read_is_dropped() {
        let mut p = plan(2, 0.25);
        p.tiles.truncate(2);
        let frags = vec![
            (vec![], vec![e("a", "aus", "ehrbar")]),
            (vec![Sense::translation("ehrbar")], vec![e("d", "wõtma", "nehmen")]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(m.entries, vec![e("a", "aus", "ehrbar"), e("d", "wõtma", "nehmen")]);
    }

    #[test]
    fn page_top_continuation_is_kept_as_leading() {
        let p = plan(1, 0.0);
        let frags = vec![(vec![Sense::translation("Rest")], vec![e("a", "aus", "ehrbar")]), (vec![], vec![])];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(m.leading, vec![Sense::translation("Rest")]);
        assert_eq!(m.to_document().entries.len(), 1);
    }

    #[test]
    fn unmatched_entry_goes_between_matches() {
        let mut p = plan(2, 0.25);
        p.tiles.truncate(2);
        let frags = vec![
            (vec![], vec![e("a", "aus", "ehrbar"), e("b", "ärra", "weg"), e("c", "wop", "Ahle")]),
            (vec![], vec![e("x", "ärra", "weg"), e("y", "hälb", "Ruhe"), e("z", "wop", "Ahle"), e("w", "zzz", "Ende")]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(orths(&m), vec!["aus", "ärra", "hälb", "wop", "zzz"]);
    }

    #[test]
    fn near_duplicate_headwords() {
        let a = e("a", "kôrts", "Krug");
        let b = e("b", "körts", "Krug");
        assert!(duplicate_score(&a, &b, DEFAULT_THRESHOLD).is_some());
        let c = e("c", "wop", "Ahle");
        assert!(duplicate_score(&a, &c, DEFAULT_THRESHOLD).is_none());
        assert_eq!(dedupe_pair(std::slice::from_ref(&a), std::slice::from_ref(&a), 0.8).len(), 1);
    }

    #[test]
    fn ids_deduplicated() {
        let p = plan(2, 0.0);
        let frags = vec![
            (vec![], vec![e("e1", "a", "x")]),
            (vec![], vec![e("e1", "b", "y")]),
            (vec![], vec![e("e1", "c", "z")]),
            (vec![], vec![]),
        ];
        let m = merge_fragments(&set(p, frags), DEFAULT_THRESHOLD).unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e1-01", "e1-10"]);
        m.to_document().validate().unwrap();
    }

    #[test]
    fn nine_field_provenance() {
        let p = plan(2, 0.0);
        let frags: Vec<Fragment<DictionaryEntry>> = p
            .tiles
            .iter()
            .enumerate()
            .map(|(i, t)| Fragment::new(*t, vec![DictionaryEntry::new(format!("hw{i}"), "de")]))
            .collect();
        let m = merge_fragments(&FragmentSet::new(p, frags), 0.8).unwrap();
        let prov: Vec<_> =
            m.entries.iter().map(|e| (e.provenance.column, e.provenance.segment, e.provenance.order_on_page)).collect();
        assert_eq!(prov[0], (1, Segment::Index(0), 0));
        assert_eq!(prov[3], (2, Segment::Index(1), 3));
    }

    #[test]
    fn errors() {
        let p = plan(2, 0.0);
        let empty: FragmentSet<TeiEntry> = FragmentSet::new(p.clone(), vec![]);
        assert!(matches!(merge_fragments(&empty, 0.8), Err(MergeError::EmptyFragmentSet)));
        let one = set(p, vec![(vec![], vec![])]);
        assert!(matches!(merge_fragments(&one, 0.8), Err(MergeError::FragmentMismatch { .. })));
    }
}
