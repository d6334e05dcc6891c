//! Per-image domain transforms.
//!
//! All transforms act on the raw grayscale glyph at its native resolution;
//! resizing to the network input happens afterwards.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Rgb, RgbImage};
use rand::Rng;
use sha2::{Digest, Sha256};

use super::DataError;

/// Pixel inversion, `255 - v`.
pub fn to_negative(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        p.0[0] = 255 - p.0[0];
    }
    out
}

/// Sobel gradient magnitude with replicated borders, rescaled so the
/// brightest response maps to 255. Flat images map to all zeros.
pub fn to_edge(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dimensions();
    let (wi, hi) = (w as i64, h as i64);
    let at = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, wi - 1) as u32;
        let y = y.clamp(0, hi - 1) as u32;
        img.get_pixel(x, y).0[0] as f64
    };
    let mut mag = vec![0.0f64; (w * h) as usize];
    for y in 0..hi {
        for x in 0..wi {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[(y * wi + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mut out = GrayImage::new(w, h);
    if max > 0.0 {
        for (p, m) in out.pixels_mut().zip(&mag) {
            p.0[0] = (m * 255.0 / max).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Blends a glyph into a background patch: `|patch[c] - gray|` per channel.
pub fn to_color<R: Rng + ?Sized>(
    img: &GrayImage,
    background: &BackgroundSource,
    rng: &mut R,
) -> Result<RgbImage, DataError> {
    let (w, h) = img.dimensions();
    let patch = background.patch(w, h, rng)?;
    let mut out = RgbImage::new(w, h);
    for ((o, g), b) in out.pixels_mut().zip(img.pixels()).zip(patch.pixels()) {
        let g = g.0[0] as i16;
        *o = Rgb([
            (b.0[0] as i16 - g).unsigned_abs() as u8,
            (b.0[1] as i16 - g).unsigned_abs() as u8,
            (b.0[2] as i16 - g).unsigned_abs() as u8,
        ]);
    }
    Ok(out)
}

/// Bilinear resampling to a `size x size` image.
pub fn resize_bilinear(img: &RgbImage, size: u32) -> RgbImage {
    if img.dimensions() == (size, size) {
        return img.clone();
    }
    imageops::resize(img, size, size, FilterType::Triangle)
}

/// Where color-domain backgrounds come from.
#[derive(Debug, Clone)]
pub enum BackgroundSource {
    /// Smooth random color fields: a coarse grid of random colors,
    /// bilinearly interpolated over the patch.
    Procedural,
    /// Random crops of photographs loaded from a directory.
    Corpus {
        identity: String,
        images: Vec<RgbImage>,
    },
}

const PROCEDURAL_GRID: usize = 3;

impl BackgroundSource {
    /// Loads every PNG/JPEG under `dir` (sorted by file name).
    pub fn from_dir(dir: &Path) -> Result<Self, DataError> {
        let label = dir.display().to_string();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|_| DataError::EmptyBackgroundSource(label.clone()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                    .unwrap_or(false)
            })
            .collect();
        paths.sort();
        let mut hasher = Sha256::new();
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = image::open(p)?.to_rgb8();
            hasher.update(p.file_name().unwrap().to_string_lossy().as_bytes());
            hasher.update(img.as_raw());
            images.push(img);
        }
        if images.is_empty() {
            return Err(DataError::EmptyBackgroundSource(label));
        }
        let digest = hasher.finalize();
        Ok(Self::Corpus {
            identity: format!("corpus-{}", hex::encode(&digest[..8])),
            images,
        })
    }

    /// Stable identifier used in cache keys.
    pub fn identity(&self) -> &str {
        match self {
            BackgroundSource::Procedural => "procedural",
            BackgroundSource::Corpus { identity, .. } => identity,
        }
    }

    pub fn patch<R: Rng + ?Sized>(
        &self,
        w: u32,
        h: u32,
        rng: &mut R,
    ) -> Result<RgbImage, DataError> {
        match self {
            BackgroundSource::Procedural => Ok(procedural_patch(w, h, rng)),
            BackgroundSource::Corpus { identity, images } => {
                if images.is_empty() {
                    return Err(DataError::EmptyBackgroundSource(identity.clone()));
                }
                let src = &images[rng.gen_range(0..images.len())];
                let (sw, sh) = src.dimensions();
                let resized;
                let src = if sw < w || sh < h {
                    resized = imageops::resize(src, sw.max(w), sh.max(h), FilterType::Triangle);
                    &resized
                } else {
                    src
                };
                let (sw, sh) = src.dimensions();
                let x0 = rng.gen_range(0..=sw - w);
                let y0 = rng.gen_range(0..=sh - h);
                Ok(imageops::crop_imm(src, x0, y0, w, h).to_image())
            }
        }
    }
}

fn procedural_patch<R: Rng + ?Sized>(w: u32, h: u32, rng: &mut R) -> RgbImage {
    let g = PROCEDURAL_GRID;
    let nodes: Vec<[f64; 3]> = (0..g * g)
        .map(|_| {
            [
                rng.gen::<u8>() as f64,
                rng.gen::<u8>() as f64,
                rng.gen::<u8>() as f64,
            ]
        })
        .collect();
    let mut out = RgbImage::new(w, h);
    let span = |n: u32| (n.max(2) - 1) as f64;
    for (x, y, p) in out.enumerate_pixels_mut() {
        let gx = x as f64 / span(w) * (g - 1) as f64;
        let gy = y as f64 / span(h) * (g - 1) as f64;
        let (x0, y0) = (
            (gx.floor() as usize).min(g - 2),
            (gy.floor() as usize).min(g - 2),
        );
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let mut rgb = [0u8; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let top = nodes[y0 * g + x0][c] * (1.0 - fx) + nodes[y0 * g + x0 + 1][c] * fx;
            let bottom =
                nodes[(y0 + 1) * g + x0][c] * (1.0 - fx) + nodes[(y0 + 1) * g + x0 + 1][c] * fx;
            *v = (top * (1.0 - fy) + bottom * fy).round() as u8;
        }
        *p = Rgb(rgb);
    }
    out
}
