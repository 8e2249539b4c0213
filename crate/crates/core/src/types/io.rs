//! PNG codecs for masks and the JSON manifest for instance sets.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Bitmap, ChangeMask, MaskInstance, MaskSource};
use crate::error::{Result, ScdError};
use crate::fsutil;

fn image_err(path: &Path, e: impl std::fmt::Display) -> ScdError {
    ScdError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn encode_gray(img: &GrayImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))?;
    Ok(buf.into_inner())
}

/// Single-channel 8-bit PNG bytes with pixel value = class code.
pub fn change_mask_png_bytes(mask: &ChangeMask) -> Result<Vec<u8>> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([mask.get(x as usize, y as usize)])
    });
    encode_gray(&img, Path::new("<memory>"))
}

pub fn save_change_mask(mask: &ChangeMask, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &change_mask_png_bytes(mask)?)
}

pub fn load_change_mask(path: &Path, num_classes: u8) -> Result<ChangeMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    ChangeMask::from_labels(w as usize, h as usize, num_classes, img.into_raw())
}

/// Binary PNG bytes: 255 for set pixels, 0 elsewhere.
pub fn bitmap_png_bytes(bitmap: &Bitmap) -> Result<Vec<u8>> {
    let img = GrayImage::from_fn(bitmap.width() as u32, bitmap.height() as u32, |x, y| {
        Luma([if bitmap.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    encode_gray(&img, Path::new("<memory>"))
}

pub fn save_bitmap(bitmap: &Bitmap, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &bitmap_png_bytes(bitmap)?)
}

/// Any nonzero pixel counts as set.
pub fn load_bitmap(path: &Path) -> Result<Bitmap> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    Ok(Bitmap::from_fn(w as usize, h as usize, |x, y| {
        raw[y * w as usize + x] != 0
    }))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))?;
    fsutil::write_atomic(path, &buf.into_inner())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifestEntry {
    pub id: String,
    pub source: MaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    /// PNG path relative to the manifest directory.
    pub mask: PathBuf,
}

/// JSON manifest describing a set of instances stored as per-instance PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub width: usize,
    pub height: usize,
    pub instances: Vec<InstanceManifestEntry>,
}

/// Write `<dir>/<stem>.json` plus `<dir>/<stem>_<id>.png` per instance.
pub fn save_instances(instances: &[MaskInstance], dir: &Path, stem: &str, dims: (usize, usize)) -> Result<PathBuf> {
    fsutil::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(instances.len());
    for inst in instances {
        let file = PathBuf::from(format!("{stem}_{}.png", sanitize(&inst.id)));
        save_bitmap(&inst.bitmap, &dir.join(&file))?;
        entries.push(InstanceManifestEntry {
            id: inst.id.clone(),
            source: inst.source,
            phrase: inst.phrase.clone(),
            mask: file,
        });
    }
    let manifest = InstanceManifest {
        width: dims.0,
        height: dims.1,
        instances: entries,
    };
    let path = dir.join(format!("{stem}.json"));
    fsutil::write_json_atomic(&path, &manifest)?;
    Ok(path)
}

pub fn load_instances(manifest_path: &Path) -> Result<Vec<MaskInstance>> {
    let manifest: InstanceManifest = fsutil::read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .instances
        .into_iter()
        .map(|e| {
            let bitmap = load_bitmap(&base.join(&e.mask))?;
            if bitmap.dims() != (manifest.width, manifest.height) {
                return Err(ScdError::Shape(format!(
                    "instance {} is {:?}, manifest says {}x{}",
                    e.id,
                    bitmap.dims(),
                    manifest.width,
                    manifest.height
                )));
            }
            let mut inst = MaskInstance::new(e.id, bitmap, e.source);
            inst.phrase = e.phrase;
            Ok(inst)
        })
        .collect()
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
