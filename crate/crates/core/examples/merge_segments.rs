//! Reads a synthetic page tile by tile and reassembles it, printing the
//! merge decisions for the overlap bands.

use fraktur::entry::SchemaId;
use fraktur::merger::{decisions_to_jsonl, merge_fragments, DecisionKind, Fragment, FragmentSet, DEFAULT_THRESHOLD};
use fraktur::synth::{render_page, tile_replies, PageSpec};
use fraktur::tei::parse_tei_reply;
use fraktur::tiler::{plan_tiles, PageImage, TilingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PageSpec::new("p002", 40, 4);
    let synth = render_page(&spec);
    let page = PageImage::new("p002", synth.image.clone())?;
    let tiling = TilingSpec::default();
    let plan = plan_tiles(&page, &tiling)?;

    let replies = tile_replies(&page, &synth, &tiling, SchemaId::TeiSubset)?;
    let fragments = plan
        .tiles
        .iter()
        .zip(&replies)
        .map(|(t, (_, body))| Ok(Fragment::from_document(*t, parse_tei_reply(body)?)))
        .collect::<Result<Vec<_>, fraktur::tei::TeiError>>()?;
    let read: usize = fragments.iter().map(|f| f.entries.len()).sum();

    let merged = merge_fragments(&FragmentSet::new(plan, fragments), DEFAULT_THRESHOLD)?;
    let dropped = merged.decisions.iter().filter(|d| d.kind == DecisionKind::DroppedDuplicate).count();
    println!("{read} entries read over 8 tiles, {dropped} duplicates dropped, {} kept", merged.entries.len());
    println!("matches the page reading: {}", merged.entries.iter().zip(&synth.reading).all(|(a, b)| a.same_content(b)));
    for line in decisions_to_jsonl(&merged.decisions).lines().filter(|l| l.contains("dropped")).take(3) {
        println!("{line}");
    }
    Ok(())
}
