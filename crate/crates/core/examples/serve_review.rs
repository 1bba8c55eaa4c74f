//! Starts the review API on a free port, creates a job through it, advances
//! one page and fetches the page view. Pass `--keep` to leave it running.

use std::sync::Arc;

use base64::Engine;
use serde_json::{json, Value};

use fraktur::entry::SchemaId;
use fraktur::gateway::MockProvider;
use fraktur::jobs::{JobStore, Runtime};
use fraktur::server::{router, AppState};
use fraktur::synth::{write_fixture, PageSpec};
use fraktur::tiler::TilingSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep = std::env::args().any(|a| a == "--keep");
    let root = std::env::temp_dir().join(format!("fraktur-serve-example-{}", std::process::id()));
    let fixture = write_fixture(
        &root.join("fixture"),
        &[PageSpec::new("r001", 16, 3)],
        &TilingSpec::default(),
        SchemaId::TeiSubset,
    )?;
    let state = Arc::new(AppState {
        store: JobStore::open(root.join("store"))?,
        runtime: Runtime::new(Arc::new(MockProvider::from_dir(&fixture.fixtures)?)),
        prices: None,
    });

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let server = rt.spawn(async move { axum::serve(listener, router(state)).await });

    let png = std::fs::read(&fixture.scans[0])?;
    let body = json!({
        "job_id": "review",
        "pages": [{"file_name": "r001.png", "data_base64": base64::engine::general_purpose::STANDARD.encode(png)}],
    });
    ureq::post(&format!("{base}/api/jobs")).send_json(body)?;
    let mut state = Value::Null;
    for _ in 0..4 {
        state = ureq::post(&format!("{base}/api/jobs/review/pages/1/advance")).call()?.into_json()?;
    }
    println!("page state: {}", state["state"]);
    let page: Value = ureq::get(&format!("{base}/api/jobs/review/pages/1")).call()?.into_json()?;
    println!("entries: {}", page["content"]["content"]["entries"].as_array().map_or(0, Vec::len));
    println!("first tile: {base}{}", page["tile_urls"][0].as_str().unwrap_or_default());

    if keep {
        println!("serving on {base}; Ctrl-C to stop");
        rt.block_on(server)??;
    }
    Ok(())
}
