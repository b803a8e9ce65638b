//! Grey histogram, white filter and standardization against per-pixel
//! oracles.

mod common;

use image::{Rgb, RgbImage};
use nasopath::annotations::Magnification;
use nasopath::geometry::Polygon;
use nasopath::patchfilter::{grey_histogram16, process_candidate, standardize, white_filter, HIST_BINS};
use nasopath::raster::{RasterSource, TiledSlide};
use nasopath::tiler::{partition_region, PatchBox};
use nasopath::ClassLabel;
use proptest::prelude::*;

use common::oracle;

fn image_strategy(max_side: u32) -> impl Strategy<Value = RgbImage> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<[u8; 3]>(), (w * h) as usize)
            .prop_map(move |px| RgbImage::from_fn(w, h, |x, y| Rgb(px[(y * w + x) as usize])))
    })
}

/// Bin `b` holds grey levels 16b..16b+15, i.e. 1000·luma in
/// [16000b − 500, 16000(b+1) − 500).
fn brute_bin_count(img: &RgbImage, b: usize) -> u64 {
    let lo = 16_000 * b as i64 - 500;
    let hi = 16_000 * (b as i64 + 1) - 500;
    img.pixels()
        .filter(|p| {
            let v = 299 * p[0] as i64 + 587 * p[1] as i64 + 114 * p[2] as i64;
            v >= lo && v < hi
        })
        .count() as u64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn histogram_matches_tally(img in image_strategy(40)) {
        let hist = grey_histogram16(&img);
        prop_assert_eq!(hist.iter().sum::<u64>(), (img.width() * img.height()) as u64);
        for (b, &count) in hist.iter().enumerate() {
            prop_assert_eq!(count, brute_bin_count(&img, b), "bin {}", b);
        }
    }

    #[test]
    fn keep_decision_matches_oracle(img in image_strategy(64)) {
        let d = white_filter(&img, 0.10);
        prop_assert_eq!(d.keep, oracle::keep_at_ten_percent(&img));
        let total = (img.width() * img.height()) as f64;
        prop_assert!((d.white_fraction - oracle::white_pixel_count(&img) as f64 / total).abs() < 1e-12);
    }

    /// Raising the threshold never discards a kept patch.
    #[test]
    fn threshold_is_monotone(img in image_strategy(32), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(!white_filter(&img, lo).keep || white_filter(&img, hi).keep);
    }

    /// 2:1 standardization is the rounded mean of each 2×2 block.
    #[test]
    fn downsample_matches_block_mean(seed in proptest::collection::vec(any::<u8>(), 48)) {
        let raw = RgbImage::from_fn(512, 512, |x, y| {
            let i = ((x * 7 + y * 13) as usize) % seed.len();
            Rgb([seed[i], seed[(i + 1) % seed.len()].wrapping_add(x as u8), seed[(i + 2) % seed.len()] ^ y as u8])
        });
        let out = standardize(raw.clone(), Magnification::X40).unwrap();
        prop_assert_eq!(out.dimensions(), (256, 256));
        for (x, y) in [(0u32, 0u32), (255, 255), (17, 200), (128, 3)] {
            for c in 0..3 {
                let s: u32 = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().map(|(dx, dy)| raw.get_pixel(2 * x + dx, 2 * y + dy)[c] as u32).sum();
                prop_assert_eq!(out.get_pixel(x, y)[c] as u32, (2 * s + 4) / 8);
            }
        }
    }
}

#[test]
fn all_grey_levels_land_in_their_bin() {
    for g in 0..=255u8 {
        let img = RgbImage::from_pixel(3, 3, Rgb([g, g, g]));
        let hist = grey_histogram16(&img);
        assert_eq!(hist[g as usize / 16], 9, "grey {g}");
        assert_eq!(white_filter(&img, 0.10).keep, g < 240);
    }
    assert_eq!(HIST_BINS, 16);
}

#[test]
fn thirty_percent_white_patch_is_discarded() {
    let img = RgbImage::from_fn(256, 256, |_, y| if y < 77 { Rgb([255, 255, 255]) } else { Rgb([150, 60, 140]) });
    let d = white_filter(&img, 0.10);
    assert!(!d.keep);
    assert!((d.white_fraction - 77.0 / 256.0).abs() < 1e-12);
}

#[test]
fn tiled_slide_reads_match_in_memory_image() {
    let img = RgbImage::from_fn(1300, 900, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, ((x ^ y) % 256) as u8]));
    let dir = tempfile::tempdir().unwrap();
    TiledSlide::write(&img, &dir.path().join("t"), 300, 40).unwrap();
    let tiled = TiledSlide::open(dir.path().join("t")).unwrap();
    assert_eq!(tiled.dimensions(), (1300, 900));
    for (x, y) in [(0, 0), (299, 299), (700, 100), (788, 388)] {
        let b = PatchBox { x, y, side: 512 };
        assert_eq!(tiled.extract(b).unwrap(), img.extract(b).unwrap(), "window at ({x}, {y})");
    }
    assert!(tiled.extract(PatchBox { x: 800, y: 0, side: 512 }).is_err());
}

#[test]
fn candidate_pipeline_filters_then_standardizes() {
    // A 1024×512 region at 40x: left cell tissue, right cell mostly white.
    let white = |x: u32, y: u32| x >= 512 && y >= 100;
    let img = RgbImage::from_fn(1024, 512, |x, y| if white(x, y) { Rgb([255, 255, 255]) } else { Rgb([120, 40, 110]) });
    let p = Polygon::from_coords(&[[0.0, 0.0], [1024.0, 0.0], [1024.0, 512.0], [0.0, 512.0]]);
    let cells = partition_region(&oracle::region("w", ClassLabel::Npc, p, Magnification::X40)).unwrap();
    assert_eq!(cells.len(), 2);
    let kept = process_candidate(&img, &cells[0], Magnification::X40, 0.10).unwrap().unwrap();
    assert_eq!(kept.pixels.dimensions(), (256, 256));
    assert!(kept.resized);
    assert_eq!(kept.patch_id(), "w_0_0");
    assert!(process_candidate(&img, &cells[1], Magnification::X40, 0.10).unwrap().is_none());
}
