//! Sends tile requests through the gateway against a scripted mock provider:
//! a transient failure is retried, a repeated request is served from the
//! response store, and usage is priced exactly.

use std::sync::Arc;
use std::time::Duration;

use fraktur::gateway::{
    build_vision_request, estimate_cost, Gateway, MockProvider, MockStep, ModelParams, PriceTable, PromptLibrary,
    Rates, RetryPolicy, UsageLedger,
};
use fraktur::synth::{render_page, PageSpec};
use fraktur::tiler::{crop, plan_tiles, PageImage, TilingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir()?;
    let page = PageImage::new("p001", render_page(&PageSpec::new("p001", 12, 0)).image)?;
    let plan = plan_tiles(&page, &TilingSpec { segments_per_column: 2, ..TilingSpec::default() })?;
    let params = ModelParams::default();
    let prompts = PromptLibrary::builtin();
    let requests = plan
        .tiles
        .iter()
        .map(|t| build_vision_request(&crop(&page, t)?, "hupel_tei", &prompts, &params).map_err(Into::into))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;

    let reply = r#"<div><entry xml:id="e1"><form type="lemma"><orth>Ahhi</orth></form></entry></div>"#;
    let mut mock = MockProvider::new();
    for (i, r) in requests.iter().enumerate() {
        mock = if i == 0 {
            mock.with_script(
                &r.request_id,
                [MockStep::Fail("503 service unavailable".into()), MockStep::Reply(reply.into())],
            )
        } else {
            mock.with_reply(&r.request_id, reply)
        };
    }
    let mock = Arc::new(mock);
    let gateway = Gateway::new(mock.clone())
        .with_store(dir.join("raw"))
        .with_ledger(UsageLedger::open(dir.join("ledger.jsonl"))?)
        .with_retry(RetryPolicy { base_delay: Duration::from_millis(10), ..RetryPolicy::default() });

    for r in gateway.submit_all(&requests) {
        let r = r?;
        println!(
            "{} attempts={} tokens={}+{}",
            r.request_id, r.usage.attempt_count, r.usage.input_tokens, r.usage.output_tokens
        );
    }
    let again = gateway.submit(&requests[0])?;
    println!("second submit served from store: {}", again.from_store);
    println!("provider calls: {} for {} requests, one retried", mock.calls().len(), requests.len());

    let prices = PriceTable::new().with_model(&params.model_id, Rates::per_million(1.25, 10.0));
    println!("cost: {}", estimate_cost(&gateway.ledger().records(), &prices)?);
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("fraktur-gateway-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
