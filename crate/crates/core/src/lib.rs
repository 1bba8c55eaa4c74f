pub mod enrich;
pub mod entry;
pub mod eval;
mod fsutil;
pub mod gateway;
pub mod jobs;
pub mod merger;
pub mod server;
pub mod synth;
pub mod tei;
pub mod tiler;
