//! Seeded synthetic scenes for desk-scale training and demos: smooth
//! textured backgrounds with grid-aligned rectangles appearing in T1.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{ScriptedMatcher, ScriptedSegmenter, ScriptedTracker};
use crate::backbone::TrainSample;
use crate::caption::{format_numbered_list, ScriptedCaptioner};
use crate::error::Result;
use crate::types::{Bitmap, ChangeMask, ImagePair};

/// Low-frequency colour field; distinct seeds give distinct scenes.
pub fn textured_background(size: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [
        rng.random_range(60.0..180.0),
        rng.random_range(60.0..180.0),
        rng.random_range(60.0..180.0),
    ];
    let phase: [f64; 3] = [
        rng.random_range(0.0..6.28),
        rng.random_range(0.0..6.28),
        rng.random_range(0.0..6.28),
    ];
    let freq = rng.random_range(1.0..3.0) * std::f64::consts::TAU / size as f64;
    RgbImage::from_fn(size, size, |x, y| {
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = base[c] + 40.0 * ((x as f64 * freq + phase[c]).sin() * (y as f64 * freq * 0.7 + phase[c]).cos());
            px[c] = v.clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn bitmap(&self, size: usize) -> Bitmap {
        Bitmap::rect(size, size, self.x, self.y, self.w, self.h)
    }
}

/// A rectangle on the `cell`-pixel grid, one or two cells per side.
pub fn random_cell_rect(rng: &mut impl Rng, size: usize, cell: usize) -> Rect {
    let cells = size / cell;
    let w = rng.random_range(1..=2.min(cells));
    let h = rng.random_range(1..=2.min(cells));
    Rect {
        x: rng.random_range(0..=cells - w) * cell,
        y: rng.random_range(0..=cells - h) * cell,
        w: w * cell,
        h: h * cell,
    }
}

pub fn paint_rect(img: &mut RgbImage, rect: Rect, colour: [u8; 3]) {
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            img.put_pixel(x as u32, y as u32, Rgb(colour));
        }
    }
}

/// `n` binary samples: T1 equals T0 plus one saturated rectangle on the
/// `cell` grid, which is the change target.
pub fn rect_change_samples(n: usize, size: u32, cell: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as usize;
    (0..n)
        .map(|i| {
            let t0 = textured_background(size, rng.random());
            let mut t1 = t0.clone();
            let rect = random_cell_rect(&mut rng, s, cell);
            let colour = [
                if rng.random() { 250 } else { 10 },
                rng.random_range(0..=255),
                if rng.random() { 250 } else { 10 },
            ];
            paint_rect(&mut t1, rect, colour);
            let target = ChangeMask::from_bitmap(&rect.bitmap(s));
            TrainSample::new(format!("syn{i:04}"), t0, t1, vec!["box".to_string()], target)
        })
        .collect()
}

/// `n` samples whose T0 and T1 are identical with an all-zero target.
pub fn no_change_samples(n: usize, size: u32, num_classes: u8, seed: u64) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let img = textured_background(size, rng.random());
            let target = ChangeMask::zeros(size as usize, size as usize, num_classes)?;
            TrainSample::new(format!("same{i:04}"), img.clone(), img, Vec::new(), target)
        })
        .collect()
}

/// Synthetic annotation scene with the scripted outputs of every adapter.
#[derive(Debug, Clone)]
pub struct AnnotationScene {
    pub pair: ImagePair,
    pub object_phrases: Vec<String>,
    pub vegetation_phrases: Vec<String>,
    /// Segmenter output per phrase, objects first.
    pub segments: Vec<(String, Vec<Bitmap>)>,
    pub tracker: Vec<Bitmap>,
    pub common_view: Bitmap,
}

fn list_response(items: &[String]) -> String {
    if items.is_empty() {
        "1. None".to_string()
    } else {
        format_numbered_list(items)
    }
}

impl AnnotationScene {
    pub fn object_response(&self) -> String {
        list_response(&self.object_phrases)
    }

    pub fn vegetation_response(&self) -> String {
        list_response(&self.vegetation_phrases)
    }

    pub fn script(
        &self,
        captioner: &ScriptedCaptioner,
        segmenter: &ScriptedSegmenter,
        tracker: &ScriptedTracker,
        matcher: &ScriptedMatcher,
    ) -> Result<()> {
        captioner.script(&self.pair, self.object_response(), self.vegetation_response())?;
        for (phrase, masks) in &self.segments {
            segmenter.script(&self.pair.image_t1, phrase, masks.clone());
        }
        tracker.script(&self.pair.image_t0, &self.pair.image_t1, self.tracker.clone());
        matcher.script(&self.pair.image_t0, &self.pair.image_t1, self.common_view.clone());
        Ok(())
    }
}

fn random_rect(rng: &mut impl Rng, size: usize) -> Rect {
    let w = rng.random_range(3..=size / 3);
    let h = rng.random_range(3..=size / 3);
    Rect {
        x: rng.random_range(0..=size - w),
        y: rng.random_range(0..=size - h),
        w,
        h,
    }
}

/// `n` scenes. Every sixth scene is a no-change pair; the rest mix new
/// objects, pre-existing same-category objects, tracker distractors,
/// vegetation changes and a left-aligned common view of varying width.
pub fn annotation_scenes(n: usize, size: u32, seed: u64) -> Result<Vec<AnnotationScene>> {
    const OBJECTS: [&str; 3] = ["bench", "car", "sign"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as usize;
    let t = chrono::DateTime::from_timestamp(1_600_000_000, 0).expect("valid timestamp");
    let later = t + chrono::Duration::days(200);
    (0..n)
        .map(|i| {
            let t0 = textured_background(size, rng.random());
            let id = format!("scene{i:02}");
            if i % 6 == 5 {
                return Ok(AnnotationScene {
                    pair: ImagePair::new(id, t0.clone(), t0, t, later)?,
                    object_phrases: Vec::new(),
                    vegetation_phrases: Vec::new(),
                    segments: Vec::new(),
                    tracker: Vec::new(),
                    common_view: Bitmap::full(s, s),
                });
            }
            let mut t1 = t0.clone();
            let mut object_phrases = Vec::new();
            let mut segments = Vec::new();
            let mut tracker = Vec::new();
            let n_obj = rng.random_range(1..=2);
            for phrase in OBJECTS.iter().take(n_obj) {
                let fresh = random_rect(&mut rng, s);
                paint_rect(&mut t1, fresh, [240, 20, 20]);
                tracker.push(fresh.bitmap(s));
                let mut masks = vec![fresh.bitmap(s)];
                if rng.random_bool(0.5) {
                    masks.push(random_rect(&mut rng, s).bitmap(s));
                }
                object_phrases.push(phrase.to_string());
                segments.push((phrase.to_string(), masks));
            }
            // Shadow-like proposal the segmenter never returns.
            let shadow = random_rect(&mut rng, s);
            paint_rect(&mut t1, shadow, [15, 15, 15]);
            tracker.push(shadow.bitmap(s));
            let mut vegetation_phrases = Vec::new();
            if rng.random_bool(0.5) {
                let trees = random_rect(&mut rng, s);
                paint_rect(&mut t1, trees, [30, 200, 40]);
                vegetation_phrases.push("green trees".to_string());
                segments.push(("green trees".to_string(), vec![trees.bitmap(s)]));
            }
            let cv_width = [s, s / 2, 3 * s / 4, 0][rng.random_range(0..4)];
            Ok(AnnotationScene {
                pair: ImagePair::new(id, t0, t1, t, later)?,
                object_phrases,
                vegetation_phrases,
                segments,
                tracker,
                common_view: Bitmap::rect(s, s, 0, 0, cv_width, s),
            })
        })
        .collect()
}

/// Pending pseudo-annotation with one instance per `(class, rect)`, ids
/// `"{pair_id}-iK"`. Class 2 instances are vegetation, the rest objects.
pub fn pseudo_annotation(
    pair_id: &str,
    size: usize,
    instances: &[(crate::types::ChangeClass, Rect)],
) -> Result<crate::annotation::PseudoAnnotation> {
    use crate::annotation::{paint_instances, CandidateKind, ClassifiedInstance, PseudoAnnotation, ReviewStatus};
    use crate::types::{ChangeClass, CommonViewMask, MaskInstance, MaskSource};
    let instances: Vec<ClassifiedInstance> = instances
        .iter()
        .enumerate()
        .map(|(k, &(class, rect))| ClassifiedInstance {
            instance: MaskInstance::new(format!("{pair_id}-i{k}"), rect.bitmap(size), MaskSource::Tracker),
            kind: if class == ChangeClass::AppearanceChange {
                CandidateKind::Appearance
            } else {
                CandidateKind::Object
            },
            class,
        })
        .collect();
    let caption = crate::caption::CaptionReport {
        pair_id: pair_id.to_string(),
        objects_only_in_b: vec!["car".to_string()],
        ..Default::default()
    };
    Ok(PseudoAnnotation {
        pair_id: pair_id.to_string(),
        mask: paint_instances(size, size, &instances)?,
        instances,
        common_view: CommonViewMask::new(Bitmap::full(size, size)),
        caption,
        status: ReviewStatus::PendingReview,
    })
}
