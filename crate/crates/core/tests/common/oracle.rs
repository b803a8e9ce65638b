//! Independent reference implementations: scanline rasterization of polygons
//! and a per-pixel white count.

use std::collections::BTreeMap;

use image::RgbImage;
use nasopath::annotations::{ConsideredRegion, Magnification, RegionAnnotation};
use nasopath::geometry::{Point, Polygon};
use nasopath::ClassLabel;
use rand::Rng;

/// Random star-shaped simple polygon with integer vertices inside
/// `[0, canvas)²`, with 3 to 12 vertices.
pub fn random_simple_polygon<R: Rng>(rng: &mut R, canvas: u32) -> Polygon {
    loop {
        let n = rng.random_range(3..=12);
        let c = canvas as f64;
        let cx = rng.random_range(0.25 * c..0.75 * c);
        let cy = rng.random_range(0.25 * c..0.75 * c);
        let rmax = cx.min(cy).min(c - 1.0 - cx).min(c - 1.0 - cy);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let pts: Vec<Point> = angles
            .iter()
            .map(|a| {
                let r = rng.random_range(0.15 * rmax..rmax);
                Point::new((cx + r * a.cos()).round(), (cy + r * a.sin()).round())
            })
            .collect();
        let p = Polygon::new(pts);
        if p.len() >= 3 && p.is_simple() && p.area() > 1.0 {
            return p;
        }
    }
}

pub fn region(wsi: &str, class: ClassLabel, polygon: Polygon, mag: Magnification) -> ConsideredRegion {
    ConsideredRegion::single(RegionAnnotation {
        wsi_id: wsi.to_string(),
        annotator: "A".to_string(),
        class_label: class,
        polygon,
        magnification: mag,
    })
}

/// Pixel-centre coverage mask of a simple polygon over `[0, w) × [0, h)`,
/// by even-odd scanline filling.
pub fn rasterize(p: &Polygon, w: usize, h: usize) -> Vec<bool> {
    let v = p.vertices();
    let mut mask = vec![false; w * h];
    let mut xs = Vec::new();
    for y in 0..h {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            if (a.y <= yc) != (b.y <= yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks(2) {
            let lo = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let hi = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for x in lo..hi {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

/// Covered-pixel fraction of every grid cell touched by the mask, keyed by
/// the cell's top-left corner. The grid is anchored at `origin`.
pub fn cell_fractions(mask: &[bool], w: usize, origin: (u64, u64), side: u32) -> BTreeMap<(u64, u64), f64> {
    let mut counts: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    let s = side as u64;
    for (i, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        let (x, y) = ((i % w) as u64, (i / w) as u64);
        let cx = origin.0 + (x - origin.0) / s * s;
        let cy = origin.1 + (y - origin.1) / s * s;
        *counts.entry((cx, cy)).or_default() += 1;
    }
    let area = (s * s) as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / area)).collect()
}

/// Pixels whose luma rounds to 240 or more, counted directly: round(L) ≥ 240
/// iff 1000·L ≥ 239,500 with L = 0.299R + 0.587G + 0.114B.
pub fn white_pixel_count(img: &RgbImage) -> u64 {
    img.pixels().filter(|p| 299 * p[0] as u64 + 587 * p[1] as u64 + 114 * p[2] as u64 >= 239_500).count() as u64
}

/// Keep iff the white share is at most one tenth, in integers.
pub fn keep_at_ten_percent(img: &RgbImage) -> bool {
    10 * white_pixel_count(img) <= img.width() as u64 * img.height() as u64
}
