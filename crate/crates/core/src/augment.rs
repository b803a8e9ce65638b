//! Orientation-free augmentation and image-to-tensor conversion.

use image::{imageops, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
    pub brightness: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { hflip: true, vflip: true, rot90: true, brightness: true }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { hflip: false, vflip: false, rot90: false, brightness: false }
    }
}

/// One sample's random choices. Every field is always drawn, so toggling a
/// transform never shifts the random stream for later samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
    pub brightness: f32,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw { hflip: false, vflip: false, quarter_turns: 0, brightness: 1.0 };

    pub fn sample<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Self {
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let quarter_turns = rng.random_range(0..4u8);
        let brightness = rng.random_range(0.9f32..=1.1);
        AugmentDraw {
            hflip: hflip && config.hflip,
            vflip: vflip && config.vflip,
            quarter_turns: if config.rot90 { quarter_turns } else { 0 },
            brightness: if config.brightness { brightness } else { 1.0 },
        }
    }
}

/// Applies flips, then rotation, then brightness (rounded, clamped to 0..=255).
pub fn augment(img: &RgbImage, draw: &AugmentDraw) -> RgbImage {
    let mut out = img.clone();
    if draw.hflip {
        imageops::flip_horizontal_in_place(&mut out);
    }
    if draw.vflip {
        imageops::flip_vertical_in_place(&mut out);
    }
    out = match draw.quarter_turns % 4 {
        1 => imageops::rotate90(&out),
        2 => imageops::rotate180(&out),
        3 => imageops::rotate270(&out),
        _ => out,
    };
    if draw.brightness != 1.0 {
        for v in out.iter_mut() {
            *v = (*v as f32 * draw.brightness).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// CHW floats in [0, 1], bilinearly resized to `size × size` when needed
/// (half-pixel centres, edge clamping).
pub fn to_input(img: &RgbImage, size: usize) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = size * size;
    let mut out = vec![0.0f32; 3 * plane];
    if w == size && h == size {
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = p[c] as f32 / 255.0;
            }
        }
        return out;
    }
    let axis = |o: usize, src: usize| {
        let s = ((o as f64 + 0.5) * src as f64 / size as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..size).map(|x| axis(x, w)).collect();
    for y in 0..size {
        let (y0, y1, fy) = axis(y, h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let (a, b) = (img.get_pixel(x0 as u32, y0 as u32), img.get_pixel(x1 as u32, y0 as u32));
            let (c, d) = (img.get_pixel(x0 as u32, y1 as u32), img.get_pixel(x1 as u32, y1 as u32));
            for ch in 0..3 {
                let top = a[ch] as f32 * (1.0 - fx) + b[ch] as f32 * fx;
                let bot = c[ch] as f32 * (1.0 - fx) + d[ch] as f32 * fx;
                out[ch * plane + y * size + x] = (top * (1.0 - fy) + bot * fy) / 255.0;
            }
        }
    }
    out
}
