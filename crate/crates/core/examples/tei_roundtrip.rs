//! Parses a TEI fragment, shows the structure tokens used for scoring and
//! writes it back.

use fraktur::tei::{parse_tei_reply, serialize_tei};

const FRAGMENT: &str = r#"<div>
  <sense><cit type="translation" xml:lang="de"><quote>die Mühle</quote></cit></sense>
  <entry xml:id="e1">
    <form type="lemma"><orth>Ahhi</orth></form>
    <gramGrp><pos>s.</pos><gram>ahjo</gram></gramGrp>
    <sense><cit type="translation" xml:lang="de"><quote>Ofen</quote></cit><usg>d.</usg></sense>
  </entry>
  <entry xml:id="e2">
    <form type="lemma"><orth>Ahtma</orth></form>
    <sense><cit type="translation" xml:lang="de"><quote>schüren</quote></cit><xr>ahhetama</xr></sense>
  </entry>
</div>"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let doc = parse_tei_reply(FRAGMENT)?;
    println!("{} leading sense(s), {} entries", doc.leading.len(), doc.entries.len());
    println!("structure: {}", doc.structure_tokens().join(" "));
    println!("content:   {}", doc.content_chars().iter().collect::<String>());
    let xml = serialize_tei(&doc);
    println!("{xml}");
    assert_eq!(parse_tei_reply(&xml)?, doc);
    Ok(())
}
