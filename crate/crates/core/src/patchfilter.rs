//! Pixel extraction, white-background rejection and magnification
//! standardization of candidate patches.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotations::Magnification;
use crate::class::ClassLabel;
use crate::error::{Error, Result};
use crate::par;
use crate::raster::{self, RasterSource};
use crate::tiler::{CandidatePatch, PatchBox};

pub const STANDARD_SIDE: u32 = 256;
pub const DEFAULT_WHITE_THRESHOLD: f64 = 0.10;
pub const HIST_BINS: usize = 16;
/// Lowest grey level falling in the top (white) bin.
pub const WHITE_LEVEL: u8 = 240;

/// Luma with weights 0.299/0.587/0.114, rounded half-up. Integer-exact.
#[inline]
pub fn grey_level(px: Rgb<u8>) -> u8 {
    let [r, g, b] = px.0;
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn grey_histogram16(pixels: &RgbImage) -> [u64; HIST_BINS] {
    let mut bins = [0u64; HIST_BINS];
    for px in pixels.pixels() {
        bins[(grey_level(*px) / 16) as usize] += 1;
    }
    bins
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhiteDecision {
    pub keep: bool,
    pub white_fraction: f64,
}

/// Discards a patch when strictly more than `threshold` of its pixels fall in
/// the white bin.
pub fn white_filter(pixels: &RgbImage, threshold: f64) -> WhiteDecision {
    let hist = grey_histogram16(pixels);
    let total: u64 = hist.iter().sum();
    let white = hist[HIST_BINS - 1];
    let white_fraction = if total == 0 { 0.0 } else { white as f64 / total as f64 };
    WhiteDecision { keep: (white as f64) <= threshold * total as f64, white_fraction }
}

/// Brings a raw patch to 256×256: 40x patches are 2×2 box-averaged (rounded
/// half-up), 20x patches pass through.
pub fn standardize(raw: RgbImage, magnification: Magnification) -> Result<RgbImage> {
    let expected = magnification.patch_side();
    if raw.width() != expected || raw.height() != expected {
        return Err(Error::InvalidInput(format!(
            "raw patch is {}x{}, expected {expected}x{expected} at {}x",
            raw.width(),
            raw.height(),
            magnification.value()
        )));
    }
    match magnification {
        Magnification::X20 => Ok(raw),
        Magnification::X40 => Ok(downsample_2x(&raw)),
    }
}

fn downsample_2x(src: &RgbImage) -> RgbImage {
    RgbImage::from_fn(src.width() / 2, src.height() / 2, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        let quad = [
            src.get_pixel(sx, sy),
            src.get_pixel(sx + 1, sy),
            src.get_pixel(sx, sy + 1),
            src.get_pixel(sx + 1, sy + 1),
        ];
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let sum: u32 = quad.iter().map(|p| p.0[c] as u32).sum();
            *o = ((sum + 2) / 4) as u8;
        }
        Rgb(out)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub wsi_id: String,
    pub class_label: ClassLabel,
    pub pixels: RgbImage,
    pub source_bbox: PatchBox,
    pub area_fraction: f64,
    pub white_fraction: f64,
    pub source_magnification: Magnification,
    pub resized: bool,
}

impl Patch {
    pub fn patch_id(&self) -> String {
        patch_id(&self.wsi_id, self.source_bbox)
    }

    pub fn record(&self, concordant: bool) -> PatchRecord {
        PatchRecord {
            patch_id: self.patch_id(),
            wsi_id: self.wsi_id.clone(),
            class: self.class_label,
            x: self.source_bbox.x,
            y: self.source_bbox.y,
            side: self.source_bbox.side,
            area_fraction: self.area_fraction,
            white_fraction: self.white_fraction,
            magnification: self.source_magnification.value(),
            resized: self.resized,
            concordant,
        }
    }
}

pub fn patch_id(wsi_id: &str, bbox: PatchBox) -> String {
    format!("{wsi_id}_{}_{}", bbox.x, bbox.y)
}

/// Extract → white filter on the raw pixels → standardize. `None` when the
/// patch is rejected as background.
pub fn process_candidate(
    source: &dyn RasterSource,
    candidate: &CandidatePatch,
    magnification: Magnification,
    white_threshold: f64,
) -> Result<Option<Patch>> {
    let raw = source.extract(candidate.bbox)?;
    let decision = white_filter(&raw, white_threshold);
    if !decision.keep {
        return Ok(None);
    }
    let pixels = standardize(raw, magnification)?;
    Ok(Some(Patch {
        wsi_id: candidate.wsi_id.clone(),
        class_label: candidate.class_label,
        pixels,
        source_bbox: candidate.bbox,
        area_fraction: candidate.area_fraction,
        white_fraction: decision.white_fraction,
        source_magnification: magnification,
        resized: magnification == Magnification::X40,
    }))
}

/// Parallel over candidates; output order follows input order.
pub fn process_candidates(
    source: &dyn RasterSource,
    candidates: &[CandidatePatch],
    magnification: Magnification,
    white_threshold: f64,
) -> Result<Vec<Patch>> {
    let results = par::map(candidates, |c| process_candidate(source, c, magnification, white_threshold));
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        if let Some(p) = r? {
            out.push(p);
        }
    }
    Ok(out)
}

/// One line of the `patches.jsonl` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub wsi_id: String,
    pub class: ClassLabel,
    pub x: u64,
    pub y: u64,
    pub side: u32,
    pub area_fraction: f64,
    pub white_fraction: f64,
    pub magnification: u32,
    pub resized: bool,
    pub concordant: bool,
}

pub fn save_patch(dir: &Path, patch: &Patch) -> Result<()> {
    raster::write_png(&dir.join(format!("{}.png", patch.patch_id())), &patch.pixels)
}

pub fn write_sidecar(path: &Path, records: &[PatchRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<PatchRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: format!("{} line {}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
