//! Runs a three-page job end to end against recorded replies: tiling,
//! recognition, merging, scoring and export.

use std::sync::Arc;

use fraktur::entry::SchemaId;
use fraktur::gateway::MockProvider;
use fraktur::jobs::{ExportFormat, JobConfig, JobStore, Runtime, ScanInput};
use fraktur::synth::{standard_pages, write_fixture};
use fraktur::tiler::TilingSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("fraktur-batch-example-{}", std::process::id()));
    let fixture = write_fixture(&root.join("fixture"), &standard_pages(), &TilingSpec::default(), SchemaId::TeiSubset)?;
    let store = JobStore::open(root.join("store"))?;
    let scans = fixture.scans.iter().map(|p| ScanInput::from_path(p)).collect::<Result<Vec<_>, _>>()?;
    let config = JobConfig { reference_dir: Some(fixture.reference.clone()), ..JobConfig::default() };
    let job = store.create_job(Some("hupel-demo"), scans, config)?;

    let rt = Runtime::new(Arc::new(MockProvider::from_dir(&fixture.fixtures)?));
    for page in &job.pages {
        let state = store.advance_to_recognized(&job.job_id, page.number, &rt)?;
        println!("page {} ({}): {}", page.number, page.page_id, state.name());
    }
    for r in store.evaluate(&job.job_id, &fixture.reference)? {
        println!(
            "{}: structure {:.3} content {:.3} perfect {}/{} orth CER {:.3}",
            r.page_id,
            r.structural_similarity,
            r.textual_similarity,
            r.perfect_entries,
            r.total_entries,
            r.field_cer.get("orth").copied().unwrap_or_default()
        );
    }
    println!("csv: {}", store.export(&job.job_id, ExportFormat::Csv)?.display());
    println!("tei: {}", store.export(&job.job_id, ExportFormat::Tei)?.display());
    Ok(())
}
