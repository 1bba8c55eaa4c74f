//! Links an anchor dictionary to three other sources without a model, then
//! summarises triage labels.

use fraktur::enrich::{
    load_source_csv, map_sources, mapping_csv, normalize_form, triage_stats, ColumnMap, Lang, TriageLabel,
    DEFAULT_MATCH_THRESHOLD,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cols = ColumnMap::default();
    let anchor =
        load_source_csv("headword,equivalent\nUbbene,Apffel\nHobbune,Pferd\nKörts,Krug\n", "gutsclaff", &cols)?;
    let others = vec![
        load_source_csv("headword,equivalent,modern\nAun,Apffel,õun\nHobbo,Pferdt,hobune\n", "stahl", &cols)?,
        load_source_csv("headword,equivalent,word_form\nõun,apffel,Oun\n", "goeseken", &cols)?,
        load_source_csv(
            "headword,equivalent,example,example_de\nOun,Der Apffel,Ouna Südda.,Das Korn gehäuse im Apffel\n",
            "vestring",
            &cols,
        )?,
    ];
    println!("pivot keys: {} / {}", normalize_form("Der Apffel", Lang::De), normalize_form("Hobbune", Lang::Et));

    let (rows, warnings) = map_sources(&anchor, &others, DEFAULT_MATCH_THRESHOLD, None);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", mapping_csv(&rows, &anchor.source_id, &others));

    let mut labels = vec![TriageLabel::Correct; 277];
    labels.extend([TriageLabel::MinorEdit; 38]);
    labels.extend([TriageLabel::FullRevision; 27]);
    let s = triage_stats(&labels)?;
    println!(
        "triage of {}: {:.1}% correct, {:.1}% minor edit, {:.1}% full revision",
        s.total, s.correct_pct, s.minor_edit_pct, s.full_revision_pct
    );
    Ok(())
}
