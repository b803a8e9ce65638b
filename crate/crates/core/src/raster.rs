//! Source imagery: plain rasters held in memory, and a tiled on-disk layout
//! (`tiles/{row}_{col}.png` plus `meta.json`) that lets large slides be read
//! window by window.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{GenericImageView, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiler::PatchBox;

pub trait RasterSource: Sync {
    fn dimensions(&self) -> (u64, u64);

    /// Reads the exact pixels under `bbox`.
    fn extract(&self, bbox: PatchBox) -> Result<RgbImage>;
}

fn check_bounds(bbox: PatchBox, (w, h): (u64, u64)) -> Result<()> {
    let side = bbox.side as u64;
    if bbox.side == 0 || bbox.x + side > w || bbox.y + side > h {
        return Err(Error::OutOfBounds { bbox: bbox.to_string(), width: w as u32, height: h as u32 });
    }
    Ok(())
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

impl RasterSource for RgbImage {
    fn dimensions(&self) -> (u64, u64) {
        let (w, h) = GenericImageView::dimensions(self);
        (w as u64, h as u64)
    }

    fn extract(&self, bbox: PatchBox) -> Result<RgbImage> {
        check_bounds(bbox, RasterSource::dimensions(self))?;
        Ok(self.view(bbox.x as u32, bbox.y as u32, bbox.side, bbox.side).to_image())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiledMeta {
    pub width: u64,
    pub height: u64,
    pub magnification: u32,
    pub tile_size: u32,
}

/// Slide stored as a directory of equally sized PNG tiles.
pub struct TiledSlide {
    dir: PathBuf,
    meta: TiledMeta,
    cache: Mutex<HashMap<(u64, u64), Arc<RgbImage>>>,
}

const TILE_CACHE_LIMIT: usize = 64;

impl TiledSlide {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: TiledMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { context: meta_path.display().to_string(), message: e.to_string() })?;
        if meta.tile_size == 0 {
            return Err(Error::InvalidInput(format!("{}: tile_size must be positive", meta_path.display())));
        }
        Ok(TiledSlide { dir, meta, cache: Mutex::new(HashMap::new()) })
    }

    pub fn meta(&self) -> &TiledMeta {
        &self.meta
    }

    fn tile(&self, row: u64, col: u64) -> Result<Arc<RgbImage>> {
        if let Some(t) = self.cache.lock().unwrap().get(&(row, col)) {
            return Ok(t.clone());
        }
        let path = self.dir.join("tiles").join(format!("{row}_{col}.png"));
        let t = Arc::new(read_image(&path)?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= TILE_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert((row, col), t.clone());
        Ok(t)
    }

    /// Writes `img` in tiled layout under `dir`.
    pub fn write(img: &RgbImage, dir: &Path, tile_size: u32, magnification: u32) -> Result<()> {
        let tiles = dir.join("tiles");
        fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
        let (w, h) = img.dimensions();
        for row in 0..h.div_ceil(tile_size) {
            for col in 0..w.div_ceil(tile_size) {
                let x = col * tile_size;
                let y = row * tile_size;
                let tw = tile_size.min(w - x);
                let th = tile_size.min(h - y);
                let tile = img.view(x, y, tw, th).to_image();
                write_png(&tiles.join(format!("{row}_{col}.png")), &tile)?;
            }
        }
        let meta = TiledMeta { width: w as u64, height: h as u64, magnification, tile_size };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&path, e))
    }
}

impl RasterSource for TiledSlide {
    fn dimensions(&self) -> (u64, u64) {
        (self.meta.width, self.meta.height)
    }

    fn extract(&self, bbox: PatchBox) -> Result<RgbImage> {
        check_bounds(bbox, self.dimensions())?;
        let ts = self.meta.tile_size as u64;
        let side = bbox.side as u64;
        let mut out = RgbImage::new(bbox.side, bbox.side);
        for row in bbox.y / ts..=(bbox.y + side - 1) / ts {
            for col in bbox.x / ts..=(bbox.x + side - 1) / ts {
                let tile = self.tile(row, col)?;
                let (tx0, ty0) = (col * ts, row * ts);
                let x0 = bbox.x.max(tx0);
                let y0 = bbox.y.max(ty0);
                let x1 = (bbox.x + side).min(tx0 + tile.width() as u64);
                let y1 = (bbox.y + side).min(ty0 + tile.height() as u64);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = *tile.get_pixel((x - tx0) as u32, (y - ty0) as u32);
                        out.put_pixel((x - bbox.x) as u32, (y - bbox.y) as u32, px);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, ((x * 7 + y * 3) % 256) as u8]))
    }

    #[test]
    fn whole_image_extract() {
        let img = gradient(256, 256);
        let out = img.extract(PatchBox { x: 0, y: 0, side: 256 }).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn out_of_bounds_names_bbox() {
        let img = gradient(300, 300);
        let err = img.extract(PatchBox { x: 100, y: 0, side: 256 }).unwrap_err().to_string();
        assert!(err.contains("(100, 0, side 256)"), "{err}");
    }

    #[test]
    fn tiled_extract_matches_in_memory() {
        let img = gradient(700, 500);
        let dir = tempfile::tempdir().unwrap();
        TiledSlide::write(&img, dir.path(), 128, 20).unwrap();
        let slide = TiledSlide::open(dir.path()).unwrap();
        assert_eq!(slide.dimensions(), (700, 500));
        for b in [
            PatchBox { x: 0, y: 0, side: 256 },
            PatchBox { x: 100, y: 200, side: 256 },
            PatchBox { x: 444, y: 244, side: 256 },
        ] {
            assert_eq!(slide.extract(b).unwrap(), img.extract(b).unwrap());
        }
        assert!(slide.extract(PatchBox { x: 600, y: 0, side: 256 }).is_err());
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let img = gradient(64, 48);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }
}
