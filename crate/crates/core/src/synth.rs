//! Synthetic data: class textures, an in-memory texture set, and a small
//! end-to-end fixture (slides, annotations, config).

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::raster::{write_png, TiledSlide};
use crate::trainer::MemorySamples;
use crate::ClassLabel;

fn jitter<R: Rng>(rng: &mut R, base: [u8; 3], spread: i32) -> Rgb<u8> {
    Rgb(base.map(|c| (c as i32 + rng.random_range(-spread..=spread)).clamp(0, 230) as u8))
}

/// Normal: stripes; NPI: dot lattice; NPC: uniform colour noise. All pixels
/// stay below the white level.
pub fn texture<R: Rng>(class: ClassLabel, width: u32, height: u32, rng: &mut R) -> RgbImage {
    match class {
        ClassLabel::Normal => {
            let period = rng.random_range(6..=12u32);
            let phase = rng.random_range(0..period);
            let dir = rng.random_range(0..3u32);
            let (a, b) = (jitter(rng, [200, 120, 170], 15), jitter(rng, [120, 50, 120], 15));
            RgbImage::from_fn(width, height, |x, y| {
                let t = match dir {
                    0 => x,
                    1 => y,
                    _ => x + y,
                };
                if (t + phase) % period < period / 2 {
                    a
                } else {
                    b
                }
            })
        }
        ClassLabel::Npi => {
            let pitch = rng.random_range(8..=14u32);
            let r2 = (pitch * pitch / 10) as i64;
            let (ox, oy) = (rng.random_range(0..pitch), rng.random_range(0..pitch));
            let (bg, dot) = (jitter(rng, [215, 170, 200], 10), jitter(rng, [70, 30, 110], 15));
            RgbImage::from_fn(width, height, |x, y| {
                let dx = ((x + ox) % pitch) as i64 - (pitch / 2) as i64;
                let dy = ((y + oy) % pitch) as i64 - (pitch / 2) as i64;
                if dx * dx + dy * dy <= r2 {
                    dot
                } else {
                    bg
                }
            })
        }
        ClassLabel::Npc => {
            let mut img = RgbImage::new(width, height);
            for p in img.pixels_mut() {
                *p = Rgb([rng.random_range(40..230), rng.random_range(20..200), rng.random_range(60..230)]);
            }
            img
        }
    }
}

/// `per_class` textures per class at `side × side`, interleaved by class.
pub fn texture_dataset(per_class: usize, side: u32, seed: u64) -> MemorySamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(3 * per_class);
    for i in 0..per_class {
        for class in ClassLabel::ALL {
            let img = texture(class, side, side, &mut rng);
            items.push((format!("{}_{i:03}", class.as_str().to_lowercase()), class, Arc::new(img)));
        }
    }
    MemorySamples { items }
}

pub const FIXTURE_SLIDE_SIDE: u32 = 1536;

/// Writes a three-slide fixture under `dir`: `annotations.json`,
/// `slides/` and `config.toml`. Slides `s1`, `s2` form image set 1 and
/// `s3` image set 2. Each slide has one 1536×512 band per class; `s1` also
/// carries a second annotator on its Normal band and a white blot covering
/// 30% of one NPC cell.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slides = dir.join("slides");
    std::fs::create_dir_all(&slides).map_err(|e| Error::io(&slides, e))?;
    let side = FIXTURE_SLIDE_SIDE;
    let band = side / 3;
    let mut docs = Vec::new();
    for (n, wsi) in ["s1", "s2", "s3"].iter().enumerate() {
        let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
        let mut annotations = Vec::new();
        for (b, class) in ClassLabel::ALL.iter().enumerate() {
            let y0 = b as u32 * band;
            // Each 256 cell gets its own texture draw.
            for cy in (y0..y0 + band).step_by(256) {
                for cx in (0..side).step_by(256) {
                    let tex = texture(*class, 256, 256, &mut rng);
                    image::imageops::replace(&mut img, &tex, cx as i64, cy as i64);
                }
            }
            let poly = json!([[0, y0], [side, y0], [side, y0 + band], [0, y0 + band]]);
            annotations.push(json!({"annotator": "A", "class": class.as_str(), "polygon": poly}));
        }
        if n == 0 {
            let y0 = 0;
            let poly = json!([[8, y0 + 4], [side - 4, y0], [side, y0 + band - 8], [0, y0 + band]]);
            annotations.push(json!({"annotator": "B", "class": "Normal", "polygon": poly}));
            // 256·77 = 19,712 white pixels: 30.08% of the cell at (0, 1024).
            for y in 1024..1024 + 77 {
                for x in 0..256 {
                    img.put_pixel(x, y, Rgb([255, 255, 255]));
                }
            }
        }
        if n == 2 {
            TiledSlide::write(&img, &slides.join(wsi), 512, 20)?;
        } else {
            write_png(&slides.join(format!("{wsi}.png")), &img)?;
        }
        docs.push(json!({"wsi_id": wsi, "magnification": 20, "annotations": annotations}));
    }
    let ann = dir.join("annotations.json");
    std::fs::write(&ann, serde_json::to_string_pretty(&docs).expect("json") + "\n").map_err(|e| Error::io(&ann, e))?;
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, fixture_config(seed)).map_err(|e| Error::io(&cfg, e))
}

fn fixture_config(seed: u64) -> String {
    format!(
        r#"seed = {seed}

[paths]
annotations = "annotations.json"
slides = "slides"
output = "output"

[image_sets]
set1 = ["s1", "s2"]
set2 = ["s3"]

[dataset]
per_class = 12
val_fraction = 0.25
test_per_class = 6

[architecture]
growth_rate = 4
input_size = 64

[train]
epochs = 3
batch_size = 8
"#
    )
}
