//! Cuts a synthetic two-column page into overlapping segments and writes the
//! tiles next to a plan file.
//!
//! cargo run --example tile_page -- [out_dir] [segments] [overlap]

use fraktur::synth::{render_page, PageSpec};
use fraktur::tiler::{crop, plan_tiles, PageImage, TilingSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "tiles_example".into()));
    let segments: u32 = args.next().map_or(Ok(4), |s| s.parse())?;
    let overlap: f64 = args.next().map_or(Ok(0.25), |s| s.parse())?;

    let synth = render_page(&PageSpec::new("p001", 40, 0));
    let page = PageImage::new("p001", synth.image)?;
    let spec = TilingSpec { segments_per_column: segments, overlap_fraction: overlap, ..TilingSpec::default() };
    let plan = plan_tiles(&page, &spec)?;

    std::fs::create_dir_all(&out)?;
    for tile in &plan.tiles {
        let name = format!("{}.png", tile.file_stem("p001"));
        crop(&page, tile)?.save(out.join(&name))?;
        let b = tile.bbox;
        println!(
            "{name}: x {}..{} y {}..{} overlap above {} below {}",
            b.x0, b.x1, b.y0, b.y1, tile.overlap_above_px, tile.overlap_below_px
        );
    }
    std::fs::write(out.join("p001.plan.json"), serde_json::to_string_pretty(&plan)?)?;
    println!("{} tiles written to {}", plan.tiles.len(), out.display());
    Ok(())
}
