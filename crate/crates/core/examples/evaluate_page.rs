//! Scores a recognised page against ground truth: per-field CER, structure
//! and content similarity, and the share of perfect entries.

use fraktur::eval::metrics::{cer, levenshtein, ro_ratio_str};
use fraktur::eval::{score_page, PageContent};
use fraktur::synth::{corrupt, synth_entries};
use fraktur::tei::TeiDocument;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("levenshtein(lahbutaminne, lahhutaminne) = {}", levenshtein("lahbutaminne", "lahhutaminne"));
    println!("cer = {:.4}", cer("lahbutaminne", "lahhutaminne")?);
    println!("cer(ababab, ab) = {}", cer("ababab", "ab")?);
    println!("ro_ratio(Apffel, Apfel) = {:.4}", ro_ratio_str("Apffel", "Apfel"));

    let truth = synth_entries("p", 20);
    let mut hyp = truth.clone();
    for i in [2, 7, 11] {
        hyp[i] = corrupt(&hyp[i]);
    }
    hyp.remove(15);
    let report = score_page("p", &PageContent::Tei(TeiDocument::new(hyp)), &PageContent::Tei(TeiDocument::new(truth)))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("perfect rate {:.2}", report.perfect_rate());
    Ok(())
}
