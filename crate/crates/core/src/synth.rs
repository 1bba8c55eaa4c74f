//! Synthetic two-column dictionary pages with ground truth and the model
//! replies each tile would get, for running the pipeline offline.
//!
//! Entries are drawn as bands of dark glyph-like blocks whose pattern is
//! derived from the entry text, so every tile raster (and with it the mock
//! provider's image key) is distinct. A tile "reads" exactly the entries
//! whose band lies fully inside it; entries in an overlap are therefore
//! read twice, as the merger expects.

use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::entry::{entries_to_csv, entries_to_payload, EntryProvenance, SchemaId};
use crate::eval::ro_ratio_str;
use crate::fsutil::write_atomic;
use crate::gateway::image_key;
use crate::tei::{serialize_tei, tei_entry_to_dictionary, GramGrp, Sense, TeiDocument, TeiEntry, Translation};
use crate::tiler::{crop, plan_tiles, BBox, PageImage, TileError, TilingSpec};

pub const PAGE_WIDTH: u32 = 640;
const MARGIN: u32 = 12;
const PITCH: u32 = 22;
const BAND: u32 = 14;

const ET_SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "tu", "se", "ra", "pe", "nu", "hu", "lah", "wa", "kõ", "jä", "ül", "to", "ris", "me", "ha", "sü",
    "ne", "wõ", "li", "ko", "pa",
];
const DE_SYLLABLES: [&str; 20] = [
    "Ge", "ber", "Hau", "sen", "Wal", "de", "Schä", "fer", "Brod", "kel", "Hand", "lung", "Fisch", "er", "Korn",
    "Zwei", "mann", "Stein", "Bau", "ung",
];

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    h.finalize().into()
}

fn word(bytes: &[u8], syllables: &[&str], count: usize) -> String {
    bytes.iter().take(count).map(|b| syllables[*b as usize % syllables.len()]).collect()
}

/// `n` ground-truth entries with distinct, mutually dissimilar headwords.
pub fn synth_entries(page_id: &str, n: usize) -> Vec<TeiEntry> {
    let mut out: Vec<TeiEntry> = Vec::with_capacity(n);
    let mut attempt = 0u32;
    while out.len() < n {
        attempt += 1;
        let d = digest(&[page_id, &attempt.to_string()]);
        let orth = word(&d[..], &ET_SYLLABLES, 2 + d[8] as usize % 3);
        if out.iter().any(|e| e.orth == orth || ro_ratio_str(&e.orth, &orth) >= 0.6) {
            continue;
        }
        let i = out.len();
        let mut sense = Sense::translation(word(&d[10..], &DE_SYLLABLES, 2));
        if i % 5 == 4 {
            sense.translations.push(Translation { quote: word(&d[14..], &DE_SYLLABLES, 3), lang: Some("de".into()) });
        }
        if i % 7 == 6 {
            sense.usg = Some("sprichw.".into());
        }
        let mut e = TeiEntry::new(format!("{page_id}-e{}", i + 1), orth).with_sense(sense);
        if i.is_multiple_of(3) {
            e.gram_grp =
                Some(GramGrp { pos: Some(if d[20].is_multiple_of(2) { "s." } else { "v." }.into()), gram: None });
        }
        out.push(e);
    }
    out
}

/// A typical recognition slip: `h`→`b`, else `s`→`f`, `n`→`u`, `e`→`c`,
/// else a doubled last letter.
pub fn corrupt(entry: &TeiEntry) -> TeiEntry {
    let mut e = entry.clone();
    for (from, to) in [('h', "b"), ('s', "f"), ('n', "u"), ('e', "c")] {
        if let Some(i) = e.orth.find(from) {
            e.orth.replace_range(i..i + from.len_utf8(), to);
            return e;
        }
    }
    if let Some(c) = e.orth.chars().last() {
        e.orth.push(c);
    }
    e
}

/// Indices of `count` entries spread evenly over `n`.
pub fn spread(n: usize, count: usize) -> Vec<usize> {
    (0..n).filter(|&i| (i + 1) * count / n > i * count / n).collect()
}

/// Shape of one synthetic page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageSpec {
    pub page_id: String,
    pub entries: usize,
    /// How many entries the scripted model misreads.
    pub corrupted: usize,
}

impl PageSpec {
    pub fn new(page_id: &str, entries: usize, corrupted: usize) -> Self {
        Self { page_id: page_id.into(), entries, corrupted }
    }
}

/// A rendered page with its truth and the scripted reading.
#[derive(Debug, Clone)]
pub struct SynthPage {
    pub page_id: String,
    pub image: DynamicImage,
    pub truth: Vec<TeiEntry>,
    /// What the mock model reads, entry by entry (truth with corruptions).
    pub reading: Vec<TeiEntry>,
    /// Band of each entry on the page.
    pub bands: Vec<BBox>,
}

pub fn page_height(entries: usize) -> u32 {
    let per_column = entries.div_ceil(2).max(1) as u32;
    2 * MARGIN + per_column * PITCH
}

pub fn render_page(spec: &PageSpec) -> SynthPage {
    let truth = synth_entries(&spec.page_id, spec.entries);
    let bad = spread(spec.entries, spec.corrupted);
    let reading: Vec<TeiEntry> =
        truth.iter().enumerate().map(|(i, e)| if bad.contains(&i) { corrupt(e) } else { e.clone() }).collect();
    let height = page_height(spec.entries);
    let half = PAGE_WIDTH / 2;
    let per_column = spec.entries.div_ceil(2);
    let mut img = RgbImage::from_pixel(PAGE_WIDTH, height, Rgb([244, 238, 222]));
    let mut bands = Vec::with_capacity(truth.len());
    for (i, e) in truth.iter().enumerate() {
        let (col, row) = (i / per_column.max(1), i % per_column.max(1));
        let x0 = col as u32 * half + 16;
        let x1 = (col as u32 + 1) * half - 16;
        let y0 = MARGIN + row as u32 * PITCH;
        let band = BBox::new(x0, y0, x1, y0 + BAND);
        let d = digest(&[&spec.page_id, &e.orth, &e.full_text()]);
        let mut x = x0;
        for (k, b) in d.iter().cycle().take(64).enumerate() {
            let w = 3 + (*b as u32 % 9);
            if x + w >= x1 {
                break;
            }
            let top = y0 + if k % 4 == 0 { 0 } else { 3 + (*b as u32 >> 5) % 3 };
            let ink = 30 + (b % 40);
            for yy in top..y0 + BAND {
                for xx in x..x + w {
                    img.put_pixel(xx, yy, Rgb([ink, ink / 2, ink / 3]));
                }
            }
            x += w + 2 + (*b as u32 >> 6);
        }
        bands.push(band);
    }
    SynthPage { page_id: spec.page_id.clone(), image: DynamicImage::ImageRgb8(img), truth, reading, bands }
}

fn contains(outer: &BBox, inner: &BBox) -> bool {
    outer.x0 <= inner.x0 && inner.x1 <= outer.x1 && outer.y0 <= inner.y0 && inner.y1 <= outer.y1
}

fn reply_body(entries: &[TeiEntry], schema: SchemaId) -> String {
    match schema {
        SchemaId::TeiSubset => serialize_tei(&TeiDocument::new(entries.to_vec())),
        SchemaId::NineField => entries_to_payload(
            &entries.iter().map(|e| tei_entry_to_dictionary(e, EntryProvenance::default())).collect::<Vec<_>>(),
        ),
    }
}

/// Mock replies for every tile: `(image key, body)`.
pub fn tile_replies(
    page: &PageImage,
    synth: &SynthPage,
    spec: &TilingSpec,
    schema: SchemaId,
) -> Result<Vec<(String, String)>, TileError> {
    let plan = plan_tiles(page, spec)?;
    let mut out = Vec::with_capacity(plan.tiles.len());
    for tile in &plan.tiles {
        let seen: Vec<TeiEntry> = synth
            .bands
            .iter()
            .zip(&synth.reading)
            .filter(|(b, _)| contains(&tile.bbox, b))
            .map(|(_, e)| e.clone())
            .collect();
        let raster = crop(page, tile)?;
        out.push((image_key(&raster.base64()), reply_body(&seen, schema)));
    }
    Ok(out)
}

/// Where [`write_fixture`] put things.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureLayout {
    pub scans: Vec<PathBuf>,
    /// Mock replies, one file per tile named by image key.
    pub fixtures: PathBuf,
    /// Ground truth, `{page}.xml` or `{page}.csv`.
    pub reference: PathBuf,
}

/// Renders pages into `dir/scans`, their tile replies into `dir/fixtures`
/// and their ground truth into `dir/reference`.
pub fn write_fixture(
    dir: &Path,
    pages: &[PageSpec],
    tiling: &TilingSpec,
    schema: SchemaId,
) -> Result<FixtureLayout, TileError> {
    let mut layout =
        FixtureLayout { scans: Vec::new(), fixtures: dir.join("fixtures"), reference: dir.join("reference") };
    for sub in [dir.join("scans"), layout.fixtures.clone(), layout.reference.clone()] {
        std::fs::create_dir_all(sub)?;
    }
    let ext = match schema {
        SchemaId::TeiSubset => "xml",
        SchemaId::NineField => "json",
    };
    for (n, spec) in pages.iter().enumerate() {
        let synth = render_page(spec);
        let scan = dir.join("scans").join(format!("{}.png", spec.page_id));
        synth.image.save(&scan)?;
        let page = PageImage::open(&spec.page_id, &scan)?;
        for (key, body) in tile_replies(&page, &synth, tiling, schema)? {
            write_atomic(&layout.fixtures.join(format!("{key}.{ext}")), body.as_bytes())?;
        }
        let truth = match schema {
            SchemaId::TeiSubset => {
                (format!("{}.xml", spec.page_id), serialize_tei(&TeiDocument::new(synth.truth.clone())))
            }
            SchemaId::NineField => {
                let entries: Vec<_> = synth
                    .truth
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        tei_entry_to_dictionary(
                            e,
                            EntryProvenance { page: n as u32 + 1, order_on_page: i as u32, ..Default::default() },
                        )
                    })
                    .collect();
                (format!("{}.csv", spec.page_id), entries_to_csv(&entries))
            }
        };
        write_atomic(&layout.reference.join(truth.0), truth.1.as_bytes())?;
        layout.scans.push(scan);
    }
    Ok(layout)
}

/// The three pages used by the offline end-to-end run: a perfectly read
/// page, a page with a few slips, and a 100-entry page with 59 misread
/// entries.
pub fn standard_pages() -> Vec<PageSpec> {
    vec![PageSpec::new("p001", 30, 0), PageSpec::new("p002", 40, 4), PageSpec::new("p003", 100, 59)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merger::{merge_fragments, Fragment, FragmentSet, DEFAULT_THRESHOLD};
    use crate::tei::parse_tei_reply;

    #[test]
    fn entries_are_distinct() {
        let es = synth_entries("p", 100);
        for (i, a) in es.iter().enumerate() {
            for b in &es[i + 1..] {
                assert!(ro_ratio_str(&a.orth, &b.orth) < 0.6, "{} / {}", a.orth, b.orth);
            }
        }
        assert_eq!(synth_entries("p", 10), synth_entries("p", 10));
    }

    #[test]
    fn corruption_changes_the_headword() {
        for e in synth_entries("q", 50) {
            assert_ne!(corrupt(&e).orth, e.orth);
        }
        assert_eq!(spread(100, 59).len(), 59);
        assert_eq!(spread(10, 0), Vec::<usize>::new());
    }

    #[test]
    fn merged_tile_replies_reproduce_the_reading() {
        let spec = PageSpec::new("p9", 60, 7);
        let synth = render_page(&spec);
        let page = PageImage::new("p9", synth.image.clone()).unwrap();
        let tiling = TilingSpec::default();
        let replies = tile_replies(&page, &synth, &tiling, SchemaId::TeiSubset).unwrap();
        let plan = plan_tiles(&page, &tiling).unwrap();
        let keys: std::collections::HashSet<_> = replies.iter().map(|r| &r.0).collect();
        assert_eq!(keys.len(), plan.tiles.len());
        let fragments = plan
            .tiles
            .iter()
            .zip(&replies)
            .map(|(t, (_, body))| Fragment::from_document(*t, parse_tei_reply(body).unwrap()))
            .collect();
        let merged = merge_fragments(&FragmentSet::new(plan, fragments), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(merged.entries, synth.reading);
    }
}
