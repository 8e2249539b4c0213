//! Domain types and mask algebra shared across the toolkit.
//!
//! Masks are dense grids at the processing resolution. [`Bitmap`] is the
//! binary currency, [`ChangeMask`] the per-pixel class grid, and
//! [`MaskInstance`] an object-level bitmap with provenance.

mod bitmap;
pub mod io;

use std::fmt;

use chrono::{DateTime, Utc};
use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use bitmap::Bitmap;

use crate::error::{Result, ScdError};

/// Default processing resolution (square side, pixels).
pub const DEFAULT_RESOLUTION: u32 = 504;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ChangeClass {
    NonChange = 0,
    ObjectChange = 1,
    AppearanceChange = 2,
    NotInView = 3,
}

impl ChangeClass {
    pub const ALL: [ChangeClass; 4] = [
        ChangeClass::NonChange,
        ChangeClass::ObjectChange,
        ChangeClass::AppearanceChange,
        ChangeClass::NotInView,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChangeClass::NonChange => "non_change",
            ChangeClass::ObjectChange => "object_change",
            ChangeClass::AppearanceChange => "appearance_change",
            ChangeClass::NotInView => "not_in_view",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Overlap priority when several classes claim one pixel: lower wins.
    pub(crate) fn priority(self) -> u8 {
        match self {
            ChangeClass::ObjectChange => 0,
            ChangeClass::AppearanceChange => 1,
            ChangeClass::NotInView => 2,
            ChangeClass::NonChange => 3,
        }
    }
}

impl fmt::Display for ChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense per-pixel label grid over 2 or 4 classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeMask {
    width: usize,
    height: usize,
    num_classes: u8,
    labels: Vec<u8>,
}

impl ChangeMask {
    pub fn zeros(width: usize, height: usize, num_classes: u8) -> Result<Self> {
        Self::from_labels(width, height, num_classes, vec![0; width * height])
    }

    pub fn from_labels(width: usize, height: usize, num_classes: u8, labels: Vec<u8>) -> Result<Self> {
        if num_classes != 2 && num_classes != 4 {
            return Err(ScdError::InvalidConfig(format!(
                "num_classes must be 2 or 4, got {num_classes}"
            )));
        }
        if labels.len() != width * height {
            return Err(ScdError::Shape(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ScdError::Label {
                label: bad as u32,
                num_classes: num_classes as usize,
            });
        }
        Ok(Self {
            width,
            height,
            num_classes,
            labels,
        })
    }

    /// Binary mask (K=2) with 1 where the bitmap is set.
    pub fn from_bitmap(bitmap: &Bitmap) -> Self {
        let labels = (0..bitmap.len()).map(|i| bitmap.get_index(i) as u8).collect();
        Self {
            width: bitmap.width(),
            height: bitmap.height(),
            num_classes: 2,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) -> Result<()> {
        if label >= self.num_classes {
            return Err(ScdError::Label {
                label: label as u32,
                num_classes: self.num_classes as usize,
            });
        }
        self.labels[y * self.width + x] = label;
        Ok(())
    }

    /// Pixels carrying `label`.
    pub fn region(&self, label: u8) -> Bitmap {
        let mut b = Bitmap::new(self.width, self.height);
        for (i, &l) in self.labels.iter().enumerate() {
            if l == label {
                b.set_index(i, true);
            }
        }
        b
    }

    /// Pixel count per class code.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.num_classes as usize];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn contains_class(&self, label: u8) -> bool {
        self.labels.contains(&label)
    }

    pub fn flip_horizontal(&self) -> ChangeMask {
        let mut labels = Vec::with_capacity(self.labels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                labels.push(self.get(self.width - 1 - x, y));
            }
        }
        ChangeMask { labels, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Tracker,
    Segmenter,
    Prediction,
    Manual,
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSource::Tracker => "tracker",
            MaskSource::Segmenter => "segmenter",
            MaskSource::Prediction => "prediction",
            MaskSource::Manual => "manual",
        })
    }
}

/// One object-level binary mask with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "MaskInstanceRepr")]
pub struct MaskInstance {
    pub id: String,
    pub bitmap: Bitmap,
    pub source: MaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    area: usize,
}

impl MaskInstance {
    pub fn new(id: impl Into<String>, bitmap: Bitmap, source: MaskSource) -> Self {
        let area = bitmap.area();
        Self {
            id: id.into(),
            bitmap,
            source,
            phrase: None,
            area,
        }
    }

    pub fn with_phrase(mut self, phrase: impl Into<String>) -> Self {
        self.phrase = Some(phrase.into());
        self
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bitmap.dims()
    }
}

#[derive(Deserialize)]
struct MaskInstanceRepr {
    id: String,
    bitmap: Bitmap,
    source: MaskSource,
    #[serde(default)]
    phrase: Option<String>,
}

impl From<MaskInstanceRepr> for MaskInstance {
    fn from(r: MaskInstanceRepr) -> Self {
        let mut m = MaskInstance::new(r.id, r.bitmap, r.source);
        m.phrase = r.phrase;
        m
    }
}

/// Fraction of `candidate` that lies inside `reference`: |A ∩ R| / |A|.
pub fn overlap_ratio(candidate: &MaskInstance, reference: &Bitmap) -> Result<f64> {
    bitmap_overlap_ratio(&candidate.bitmap, reference)
}

pub(crate) fn bitmap_overlap_ratio(candidate: &Bitmap, reference: &Bitmap) -> Result<f64> {
    candidate.ensure_same_dims(reference)?;
    let area = candidate.area();
    if area == 0 {
        return Err(ScdError::DegenerateMask("overlap ratio of an empty candidate".into()));
    }
    Ok(candidate.intersection_area(reference)? as f64 / area as f64)
}

/// Pixelwise OR of all instances; an empty list yields an all-zero grid of
/// the given dimensions.
pub fn union_masks(masks: &[MaskInstance], width: usize, height: usize) -> Result<Bitmap> {
    let mut out = Bitmap::new(width, height);
    for m in masks {
        out.union_in_place(&m.bitmap)?;
    }
    Ok(out)
}

/// Collapse a 4-class mask to change/no-change: any of classes 1..=3 is change.
pub fn to_binary(mask: &ChangeMask) -> Bitmap {
    let mut b = Bitmap::new(mask.width, mask.height);
    for (i, &l) in mask.labels.iter().enumerate() {
        if l != 0 {
            b.set_index(i, true);
        }
    }
    b
}

/// Paint classed regions into a 4-class mask using the fixed overlap
/// priority object > appearance > not-in-view.
pub fn paint_by_priority<'a>(
    width: usize,
    height: usize,
    regions: impl IntoIterator<Item = (ChangeClass, &'a Bitmap)>,
) -> Result<ChangeMask> {
    let mut labels = vec![0u8; width * height];
    for (class, bitmap) in regions {
        if bitmap.dims() != (width, height) {
            return Err(ScdError::Shape(format!(
                "region {}x{} painted into {width}x{height}",
                bitmap.width(),
                bitmap.height()
            )));
        }
        if class == ChangeClass::NonChange {
            continue;
        }
        for i in bitmap.iter_ones() {
            let current = ChangeClass::from_code(labels[i]).unwrap_or(ChangeClass::NonChange);
            if class.priority() < current.priority() {
                labels[i] = class.code();
            }
        }
    }
    ChangeMask::from_labels(width, height, 4, labels)
}

/// Temporally separated image pair at processing resolution.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub id: String,
    pub image_t0: RgbImage,
    pub image_t1: RgbImage,
    pub capture_t0: DateTime<Utc>,
    pub capture_t1: DateTime<Utc>,
    pub retrieval_score: Option<f64>,
}

impl ImagePair {
    pub fn new(
        id: impl Into<String>,
        image_t0: RgbImage,
        image_t1: RgbImage,
        capture_t0: DateTime<Utc>,
        capture_t1: DateTime<Utc>,
    ) -> Result<Self> {
        if image_t0.dimensions() != image_t1.dimensions() {
            return Err(ScdError::Shape(format!(
                "pair images {:?} vs {:?}",
                image_t0.dimensions(),
                image_t1.dimensions()
            )));
        }
        Ok(Self {
            id: id.into(),
            image_t0,
            image_t1,
            capture_t0,
            capture_t1,
            retrieval_score: None,
        })
    }

    /// Resample both images to `resolution x resolution`.
    pub fn resampled(mut self, resolution: u32) -> Self {
        let resize = |img: &RgbImage| {
            if img.dimensions() == (resolution, resolution) {
                img.clone()
            } else {
                image::imageops::resize(img, resolution, resolution, image::imageops::FilterType::Triangle)
            }
        };
        self.image_t0 = resize(&self.image_t0);
        self.image_t1 = resize(&self.image_t1);
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        let (w, h) = self.image_t1.dimensions();
        (w as usize, h as usize)
    }
}

/// Region of T1 also visible in T0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonViewMask {
    pub bitmap: Bitmap,
    pub coverage: f64,
}

impl CommonViewMask {
    pub fn new(bitmap: Bitmap) -> Self {
        let coverage = if bitmap.len() == 0 {
            0.0
        } else {
            bitmap.area() as f64 / bitmap.len() as f64
        };
        Self { bitmap, coverage }
    }
}
