//! Domain views of a G-dom base set, with an on-disk cache.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transforms::{resize_bilinear, to_color, to_edge, to_negative, BackgroundSource};
use super::{
    DataError, DomainId, ImageStack, LabeledImageSet, PairedAuxSet, Split, TaskId, INPUT_CHANNELS,
    INPUT_SIZE,
};
use crate::fsutil::atomic_write;
use crate::rng::{derive_seed, stream_rng, streams};

/// Bumped whenever a transform changes output, invalidating cached views.
pub const TRANSFORM_VERSION: u32 = 1;

const VIEW_MAGIC: &[u8; 8] = b"ZDAVIEW1";

/// Builds domain views with a fixed background source and optional cache.
#[derive(Debug, Clone)]
pub struct ViewBuilder {
    background: BackgroundSource,
    cache_dir: Option<PathBuf>,
}

impl Default for ViewBuilder {
    fn default() -> Self {
        Self {
            background: BackgroundSource::Procedural,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ViewMeta {
    task: TaskId,
    domain: DomainId,
    split: Split,
    seed: u64,
    transform_version: u32,
    background: String,
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    checksum: String,
}

impl ViewBuilder {
    pub fn new(background: BackgroundSource, cache_dir: Option<PathBuf>) -> Self {
        Self {
            background,
            cache_dir,
        }
    }

    pub fn background(&self) -> &BackgroundSource {
        &self.background
    }

    /// Applies the domain transform to every image, resizes to 32x32 and
    /// replicates gray to three channels. Labels and origin indices are
    /// carried over unchanged.
    pub fn build(
        &self,
        base: &LabeledImageSet,
        domain: DomainId,
        seed: u64,
    ) -> Result<LabeledImageSet, DataError> {
        if base.domain != DomainId::Gray || base.images.channels != 1 {
            return Err(DataError::NotBaseDomain(base.domain));
        }
        let Some(dir) = &self.cache_dir else {
            return self.transform(base, domain, seed);
        };
        let key = self.cache_key(base, domain, seed);
        let bin = dir.join(format!("{key}.bin"));
        let meta = dir.join(format!("{key}.json"));
        match read_cached(&bin, &meta, base) {
            Ok(Some(view)) => return Ok(view),
            Ok(None) => {}
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", bin.display()),
        }
        let view = self.transform(base, domain, seed)?;
        fs::create_dir_all(dir)?;
        write_cached(&view, seed, self.background.identity(), &bin, &meta)?;
        Ok(view)
    }

    pub fn paired(
        &self,
        base: &LabeledImageSet,
        source: DomainId,
        target: DomainId,
        seed: u64,
    ) -> Result<PairedAuxSet, DataError> {
        if source == target {
            return Err(DataError::SameDomain(source));
        }
        let source_view = self.build(base, source, seed)?;
        let target_view = self.build(base, target, seed)?;
        debug_assert_eq!(source_view.origin_indices, target_view.origin_indices);
        Ok(PairedAuxSet {
            source_view,
            target_view,
        })
    }

    pub fn cache_path(
        &self,
        base: &LabeledImageSet,
        domain: DomainId,
        seed: u64,
    ) -> Option<PathBuf> {
        let key = self.cache_key(base, domain, seed);
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{key}.bin")))
    }

    fn cache_key(&self, base: &LabeledImageSet, domain: DomainId, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update((base.images.height as u64).to_le_bytes());
        h.update((base.images.width as u64).to_le_bytes());
        for &o in &base.origin_indices {
            h.update((o as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let bg = if domain == DomainId::Color {
            self.background.identity()
        } else {
            "none"
        };
        format!(
            "{}_{}_{}_s{}_v{}_{}_{}",
            base.task.tag(),
            domain.tag(),
            base.split,
            seed,
            TRANSFORM_VERSION,
            bg,
            hex::encode(&digest[..8])
        )
    }

    fn transform(
        &self,
        base: &LabeledImageSet,
        domain: DomainId,
        seed: u64,
    ) -> Result<LabeledImageSet, DataError> {
        let (h, w) = (base.images.height as u32, base.images.width as u32);
        let out_len = INPUT_SIZE * INPUT_SIZE * INPUT_CHANNELS;
        let mut pixels = Vec::with_capacity(base.len() * out_len);
        let view_seed = derive_seed(seed, streams::VIEW);
        for (i, &origin) in base.origin_indices.iter().enumerate() {
            let gray = GrayImage::from_raw(w, h, base.images.image(i).to_vec())
                .ok_or_else(|| DataError::Inconsistent("image buffer size".into()))?;
            let rgb = match domain {
                DomainId::Gray => gray_to_rgb(&gray),
                DomainId::Negative => gray_to_rgb(&to_negative(&gray)),
                DomainId::Edge => gray_to_rgb(&to_edge(&gray)),
                DomainId::Color => {
                    let mut rng = stream_rng(view_seed, origin as u64);
                    to_color(&gray, &self.background, &mut rng)?
                }
            };
            pixels.extend_from_slice(resize_bilinear(&rgb, INPUT_SIZE as u32).as_raw());
        }
        Ok(LabeledImageSet {
            images: ImageStack::new(INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS, pixels),
            labels: base.labels.clone(),
            task: base.task,
            domain,
            split: base.split,
            origin_indices: base.origin_indices.clone(),
        })
    }
}

/// Uncached view construction with procedural backgrounds.
pub fn build_domain_view(
    base: &LabeledImageSet,
    domain: DomainId,
    seed: u64,
) -> Result<LabeledImageSet, DataError> {
    ViewBuilder::default().build(base, domain, seed)
}

/// Uncached paired auxiliary set with procedural backgrounds.
pub fn make_paired_aux(
    base: &LabeledImageSet,
    source: DomainId,
    target: DomainId,
    seed: u64,
) -> Result<PairedAuxSet, DataError> {
    ViewBuilder::default().paired(base, source, target, seed)
}

fn gray_to_rgb(img: &GrayImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let v = img.get_pixel(x, y).0[0];
        image::Rgb([v, v, v])
    })
}

fn encode_view(view: &LabeledImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + view.images.pixels.len() + 8 * view.len());
    out.extend_from_slice(VIEW_MAGIC);
    for d in [
        view.len(),
        view.images.height,
        view.images.width,
        view.images.channels,
    ] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&view.images.pixels);
    for &l in &view.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &o in &view.origin_indices {
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    out
}

fn decode_view(bytes: &[u8], meta: &ViewMeta) -> Result<LabeledImageSet, DataError> {
    let bad = |m: &str| DataError::Inconsistent(format!("cached view: {m}"));
    if bytes.len() < 24 || &bytes[..8] != VIEW_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (n, h, w, c) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let pix = n * h * w * c;
    if bytes.len() != 24 + pix + 8 * n {
        return Err(bad("length"));
    }
    let pixels = bytes[24..24 + pix].to_vec();
    let labels = (0..n).map(|i| u32_at(24 + pix + 4 * i)).collect();
    let origin_indices = (0..n).map(|i| u32_at(24 + pix + 4 * n + 4 * i)).collect();
    let view = LabeledImageSet {
        images: ImageStack::new(h, w, c, pixels),
        labels,
        task: meta.task,
        domain: meta.domain,
        split: meta.split,
        origin_indices,
    };
    view.validate()?;
    Ok(view)
}

fn read_cached(
    bin: &Path,
    meta_path: &Path,
    base: &LabeledImageSet,
) -> Result<Option<LabeledImageSet>, DataError> {
    if !bin.is_file() || !meta_path.is_file() {
        return Ok(None);
    }
    let meta: ViewMeta = serde_json::from_slice(&fs::read(meta_path)?)
        .map_err(|e| DataError::Inconsistent(format!("cache sidecar: {e}")))?;
    let bytes = fs::read(bin)?;
    if format!("{:08x}", crc32fast::hash(&bytes)) != meta.checksum
        || meta.transform_version != TRANSFORM_VERSION
    {
        return Ok(None);
    }
    let view = decode_view(&bytes, &meta)?;
    if view.origin_indices != base.origin_indices || view.labels != base.labels {
        return Ok(None);
    }
    Ok(Some(view))
}

fn write_cached(
    view: &LabeledImageSet,
    seed: u64,
    background: &str,
    bin: &Path,
    meta_path: &Path,
) -> Result<(), DataError> {
    let bytes = encode_view(view);
    let meta = ViewMeta {
        task: view.task,
        domain: view.domain,
        split: view.split,
        seed,
        transform_version: TRANSFORM_VERSION,
        background: background.to_string(),
        count: view.len(),
        height: view.images.height,
        width: view.images.width,
        channels: view.images.channels,
        checksum: format!("{:08x}", crc32fast::hash(&bytes)),
    };
    atomic_write(bin, &bytes)?;
    let text =
        serde_json::to_vec_pretty(&meta).map_err(|e| DataError::Inconsistent(e.to_string()))?;
    atomic_write(meta_path, &text)?;
    Ok(())
}
