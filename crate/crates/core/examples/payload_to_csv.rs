//! Parses a nine-field model reply (code fence and all) and prints it as CSV.

use fraktur::entry::{entries_to_csv, parse_entry_payload, validate_entry, SchemaId};

const REPLY: &str = r#"```json
[
  {"headword_et": "Abbi", "equivalent_de": "Hülffe", "synonyms_de": ["Beystand"], "part_of_speech": "s."},
  {"headword_et": "abbi andma", "equivalent_de": "helffen", "mwe_de": ["zu Hülffe kommen"]},
  {"headword_et": "Aed", "equivalent_de": "Zaun", "grammar_info": "aja", "note": "unexpected key"}
]
```"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = parse_entry_payload(REPLY, SchemaId::NineField)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    for (i, e) in parsed.entries.iter().enumerate() {
        for v in validate_entry(e) {
            eprintln!("entry {i}: {v:?}");
        }
    }
    print!("{}", entries_to_csv(&parsed.entries));
    Ok(())
}
