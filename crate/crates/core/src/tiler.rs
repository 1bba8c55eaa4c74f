//! Page geometry: column split and overlapping vertical segments.
//!
//! Segments are stacked top to bottom inside each column. With `n` segments
//! and overlap fraction `o` on a column of height `H`:
//!
//! * segment height `h = ceil(H / (n - (n-1)·o))`
//! * stride `s = round(h·(1-o))`
//! * segment `i` spans `[i·s, min(i·s + h, H))`, and the last segment always
//!   ends at `H`.
//!
//! Adjacent segments therefore share `h - s ≥ floor(o·h)` rows.

use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use image::{DynamicImage, GenericImageView, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Segments shorter than this are rejected.
pub const MIN_SEGMENT_HEIGHT: u32 = 8;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("page must be at least 2x2 pixels, got {width}x{height}")]
    PageTooSmall { width: u32, height: u32 },
    #[error("gutter ratio {0} outside [0.25, 0.75]")]
    GutterRatio(f64),
    #[error("invalid tiling parameters: {0}")]
    InvalidParameters(String),
    #[error("degenerate geometry: segment height {height}px is below {MIN_SEGMENT_HEIGHT}px")]
    DegenerateGeometry { height: u32 },
    #[error("tile {bbox:?} lies outside the {width}x{height} page")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }
}

/// A scanned page held in memory.
#[derive(Debug, Clone)]
pub struct PageImage {
    page_id: String,
    pixels: DynamicImage,
}

impl PageImage {
    pub fn new(page_id: impl Into<String>, pixels: DynamicImage) -> Result<Self, TileError> {
        let (width, height) = pixels.dimensions();
        if width < 2 || height < 2 {
            return Err(TileError::PageTooSmall { width, height });
        }
        Ok(Self { page_id: page_id.into(), pixels })
    }

    /// Loads a PNG, JPEG or TIFF scan.
    pub fn open(page_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, TileError> {
        let pixels = image::open(path)?;
        Self::new(page_id, pixels)
    }

    pub fn page_id(&self) -> &str {
        &self.page_id
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn pixels(&self) -> &DynamicImage {
        &self.pixels
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(0, 0, self.width(), self.height())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TileMode {
    WholePage,
    TwoColumns,
    #[default]
    Segments,
}

impl std::str::FromStr for TileMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "whole_page" | "whole" => Ok(TileMode::WholePage),
            "two_columns" | "columns" => Ok(TileMode::TwoColumns),
            "segments" => Ok(TileMode::Segments),
            other => Err(format!("unknown tiling mode {other:?} (whole_page, two_columns, segments)")),
        }
    }
}

/// Parameters of a tiling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingSpec {
    pub mode: TileMode,
    pub segments_per_column: u32,
    pub overlap_fraction: f64,
    pub gutter_ratio: f64,
}

impl Default for TilingSpec {
    fn default() -> Self {
        Self { mode: TileMode::Segments, segments_per_column: 4, overlap_fraction: 0.25, gutter_ratio: 0.5 }
    }
}

impl TilingSpec {
    pub fn validate(&self) -> Result<(), TileError> {
        if self.segments_per_column == 0 {
            return Err(TileError::InvalidParameters("segments_per_column must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.overlap_fraction) {
            return Err(TileError::InvalidParameters(format!(
                "overlap fraction {} outside [0, 0.5]",
                self.overlap_fraction
            )));
        }
        if !(0.25..=0.75).contains(&self.gutter_ratio) {
            return Err(TileError::GutterRatio(self.gutter_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    /// 0 = left column, 1 = right column.
    pub column_index: u8,
    pub segment_index: u32,
    pub bbox: BBox,
    pub overlap_above_px: u32,
    pub overlap_below_px: u32,
}

impl Tile {
    /// File stem used for persisted tiles: `{page}_{column}{segment}`.
    pub fn file_stem(&self, page_id: &str) -> String {
        format!("{page_id}_{}{}", self.column_index, self.segment_index)
    }
}

/// Ordered tiles of one page: column 0 top to bottom, then column 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub page_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub mode: TileMode,
    pub gutter_x: u32,
    pub segments_per_column: u32,
    pub overlap_fraction: f64,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn columns(&self) -> u8 {
        match self.mode {
            TileMode::WholePage => 1,
            _ => 2,
        }
    }

    /// Tiles of one column, top to bottom.
    pub fn column_tiles(&self, column: u8) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().filter(move |t| t.column_index == column)
    }
}

/// Result of [`split_columns`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSplit {
    pub gutter_x: u32,
    pub left: BBox,
    pub right: BBox,
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor() as u32
}

/// Splits a `width × height` page at `round(width · gutter_ratio)`.
pub fn split_columns_dims(width: u32, height: u32, gutter_ratio: f64) -> Result<ColumnSplit, TileError> {
    if !(0.25..=0.75).contains(&gutter_ratio) {
        return Err(TileError::GutterRatio(gutter_ratio));
    }
    if width < 2 || height < 2 {
        return Err(TileError::PageTooSmall { width, height });
    }
    let gutter_x = round_half_up(width as f64 * gutter_ratio).clamp(1, width - 1);
    Ok(ColumnSplit { gutter_x, left: BBox::new(0, 0, gutter_x, height), right: BBox::new(gutter_x, 0, width, height) })
}

pub fn split_columns(page: &PageImage, gutter_ratio: f64) -> Result<ColumnSplit, TileError> {
    split_columns_dims(page.width(), page.height(), gutter_ratio)
}

/// Vertical `(start, end)` ranges of `n` overlapping segments over `height` rows.
pub fn segment_ranges(height: u32, n: u32, overlap: f64) -> Result<Vec<(u32, u32)>, TileError> {
    if n == 0 {
        return Err(TileError::InvalidParameters("segments_per_column must be at least 1".into()));
    }
    if !(0.0..=0.5).contains(&overlap) {
        return Err(TileError::InvalidParameters(format!("overlap fraction {overlap} outside [0, 0.5]")));
    }
    let denom = n as f64 - (n as f64 - 1.0) * overlap;
    let h = ((height as f64 / denom).ceil() as u32).min(height);
    if h < MIN_SEGMENT_HEIGHT {
        return Err(TileError::DegenerateGeometry { height: h });
    }
    let stride = round_half_up(h as f64 * (1.0 - overlap)).clamp(1, h);

    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut start = i.saturating_mul(stride);
        if start >= height {
            start = height - h;
        }
        let end = if i + 1 == n { height } else { (start + h).min(height) };
        out.push((start, end));
    }
    Ok(out)
}

/// Builds the tile plan for a page of the given size.
pub fn plan_tiles_dims(page_id: &str, width: u32, height: u32, spec: &TilingSpec) -> Result<TilePlan, TileError> {
    spec.validate()?;
    let split = split_columns_dims(width, height, spec.gutter_ratio)?;
    let tiles = match spec.mode {
        TileMode::WholePage => vec![Tile {
            column_index: 0,
            segment_index: 0,
            bbox: BBox::new(0, 0, width, height),
            overlap_above_px: 0,
            overlap_below_px: 0,
        }],
        TileMode::TwoColumns => [split.left, split.right]
            .iter()
            .enumerate()
            .map(|(c, bbox)| Tile {
                column_index: c as u8,
                segment_index: 0,
                bbox: *bbox,
                overlap_above_px: 0,
                overlap_below_px: 0,
            })
            .collect(),
        TileMode::Segments => {
            let ranges = segment_ranges(height, spec.segments_per_column, spec.overlap_fraction)?;
            let mut tiles = Vec::with_capacity(ranges.len() * 2);
            for (c, column) in [split.left, split.right].iter().enumerate() {
                for (i, &(y0, y1)) in ranges.iter().enumerate() {
                    let above = if i == 0 { 0 } else { ranges[i - 1].1.saturating_sub(y0) };
                    let below = ranges.get(i + 1).map_or(0, |next| y1.saturating_sub(next.0));
                    tiles.push(Tile {
                        column_index: c as u8,
                        segment_index: i as u32,
                        bbox: BBox::new(column.x0, y0, column.x1, y1),
                        overlap_above_px: above,
                        overlap_below_px: below,
                    });
                }
            }
            tiles
        }
    };
    Ok(TilePlan {
        page_id: page_id.to_string(),
        width_px: width,
        height_px: height,
        mode: spec.mode,
        gutter_x: split.gutter_x,
        segments_per_column: spec.segments_per_column,
        overlap_fraction: spec.overlap_fraction,
        tiles,
    })
}

pub fn plan_tiles(page: &PageImage, spec: &TilingSpec) -> Result<TilePlan, TileError> {
    plan_tiles_dims(page.page_id(), page.width(), page.height(), spec)
}

/// A cropped tile with its lossless encodings.
#[derive(Debug, Clone)]
pub struct TileImage {
    pub tile: Tile,
    pub raster: DynamicImage,
    pub png: Vec<u8>,
}

impl TileImage {
    pub fn base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.png)
    }

    pub fn media_type(&self) -> &'static str {
        "image/png"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TileError> {
        std::fs::write(path, &self.png)?;
        Ok(())
    }
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, TileError> {
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)?;
    Ok(png)
}

/// Cuts `tile` out of `page`.
pub fn crop(page: &PageImage, tile: &Tile) -> Result<TileImage, TileError> {
    let b = tile.bbox;
    if b.is_empty() || b.x1 > page.width() || b.y1 > page.height() {
        return Err(TileError::OutOfBounds { bbox: b, width: page.width(), height: page.height() });
    }
    let raster = page.pixels().crop_imm(b.x0, b.y0, b.width(), b.height());
    let png = encode_png(&raster)?;
    Ok(TileImage { tile: *tile, raster, png })
}
