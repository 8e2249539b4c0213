//! Semi-automatic annotation: caption, open-vocabulary segmentation,
//! tracking, object matching, common-view estimation and view
//! classification, producing 4-class pseudo-masks on T1 for human review.

mod adapters;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use adapters::{
    image_digest, DenseMatcher, ScriptedMatcher, ScriptedSegmenter, ScriptedTracker, Segmenter, Tracker,
};
pub use pipeline::{
    run_batch, run_pipeline, Adapters, BatchReport, PairOutcome, PairRun, PendingPair, PipelineConfig, Stage,
    PSEUDO_FILE, PSEUDO_MASK_FILE,
};

use crate::caption::CaptionReport;
use crate::error::{Result, ScdError};
use crate::types::{
    bitmap_overlap_ratio, paint_by_priority, Bitmap, ChangeClass, ChangeMask, CommonViewMask, ImagePair, MaskInstance,
    MaskSource,
};

/// Which caption list a segmenter query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Object,
    Appearance,
}

impl CandidateKind {
    /// Class for an instance of this kind that lies in the common view.
    pub fn in_view_class(self) -> ChangeClass {
        match self {
            CandidateKind::Object => ChangeClass::ObjectChange,
            CandidateKind::Appearance => ChangeClass::AppearanceChange,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseQuery {
    pub phrase: String,
    pub kind: CandidateKind,
}

/// Segmenter queries for the T1 side of a caption report: new objects, then
/// changed vegetation. Phrases for T0 produce no T1 instances.
pub fn phrase_queries(report: &CaptionReport) -> Vec<PhraseQuery> {
    let objects = report.objects_only_in_b.iter().map(|p| (p, CandidateKind::Object));
    let vegetation = report
        .vegetation_changed_b
        .iter()
        .map(|p| (p, CandidateKind::Appearance));
    objects
        .chain(vegetation)
        .map(|(p, kind)| PhraseQuery {
            phrase: p.clone(),
            kind,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub instance: MaskInstance,
    pub kind: CandidateKind,
}

fn check_dims(what: &str, mask: &Bitmap, dims: (usize, usize)) -> Result<()> {
    if mask.dims() != dims {
        return Err(ScdError::Shape(format!(
            "{what} mask is {:?}, image is {dims:?}",
            mask.dims()
        )));
    }
    Ok(())
}

/// Query the segmenter once per phrase. Every instance carries its phrase;
/// ids are `seg-<query>-<k>`.
pub fn segment_open_vocab(
    image_t1: &image::RgbImage,
    queries: &[PhraseQuery],
    segmenter: &dyn Segmenter,
) -> Result<Vec<Candidate>> {
    let dims = (image_t1.width() as usize, image_t1.height() as usize);
    let mut out = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let masks = segmenter.segment(image_t1, &q.phrase).map_err(|e| match e {
            ScdError::SegmenterUnavailable(_) => e,
            other => ScdError::SegmenterUnavailable(other.to_string()),
        })?;
        for (k, m) in masks.into_iter().enumerate() {
            check_dims("segmenter", &m, dims)?;
            out.push(Candidate {
                instance: MaskInstance::new(format!("seg-{qi:02}-{k:02}"), m, MaskSource::Segmenter)
                    .with_phrase(&q.phrase),
                kind: q.kind,
            });
        }
    }
    Ok(out)
}

/// Tracker proposals present in T1 but absent in T0; ids are `trk-<k>`.
pub fn track_inconsistent(pair: &ImagePair, tracker: &dyn Tracker) -> Result<Vec<MaskInstance>> {
    let masks = tracker
        .inconsistent(&pair.image_t0, &pair.image_t1)
        .map_err(|e| match e {
            ScdError::TrackerUnavailable(_) => e,
            other => ScdError::TrackerUnavailable(other.to_string()),
        })?;
    masks
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            check_dims("tracker", &m, pair.dims())?;
            Ok(MaskInstance::new(format!("trk-{k:02}"), m, MaskSource::Tracker))
        })
        .collect()
}

/// Keep tracker masks sharing more than `min_pixels` pixels with some
/// segmenter mask. Order is preserved.
pub fn object_match(
    tracker: &[MaskInstance],
    segmenter: &[MaskInstance],
    min_pixels: usize,
) -> Result<Vec<MaskInstance>> {
    let mut kept = Vec::new();
    for t in tracker {
        let mut hit = false;
        for g in segmenter {
            if t.bitmap.intersection_area(&g.bitmap)? > min_pixels {
                hit = true;
                break;
            }
        }
        if hit {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}

pub fn estimate_common_view(pair: &ImagePair, matcher: &dyn DenseMatcher) -> Result<CommonViewMask> {
    let mask = matcher
        .correspondence(&pair.image_t0, &pair.image_t1)
        .map_err(|e| match e {
            ScdError::MatcherUnavailable(_) => e,
            other => ScdError::MatcherUnavailable(other.to_string()),
        })?;
    check_dims("matcher", &mask, pair.dims())?;
    Ok(CommonViewMask::new(mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewClassifyConfig {
    /// Minimum in-view fraction for an instance to count as a genuine change.
    pub tau_cv: f64,
    /// Treat any overlap with the common view as in view, ignoring `tau_cv`.
    pub any_overlap: bool,
}

impl Default for ViewClassifyConfig {
    fn default() -> Self {
        Self {
            tau_cv: 0.5,
            any_overlap: false,
        }
    }
}

impl ViewClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_cv) {
            return Err(ScdError::InvalidConfig(format!(
                "tau_cv = {} outside [0, 1]",
                self.tau_cv
            )));
        }
        Ok(())
    }

    pub fn in_view(&self, fraction: f64) -> bool {
        if self.any_overlap {
            fraction > 0.0
        } else {
            fraction >= self.tau_cv
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedInstance {
    pub instance: MaskInstance,
    pub kind: CandidateKind,
    pub class: ChangeClass,
}

/// Fraction of `instance` inside the common view.
pub fn in_view_fraction(instance: &MaskInstance, common_view: &CommonViewMask) -> Result<f64> {
    bitmap_overlap_ratio(&instance.bitmap, &common_view.bitmap)
}

/// In-view instances take their kind's class, the rest class 3. Empty
/// instances are skipped.
pub fn classify_by_view(
    candidates: &[Candidate],
    common_view: &CommonViewMask,
    cfg: &ViewClassifyConfig,
) -> Result<Vec<ClassifiedInstance>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.instance.is_empty() {
            log::warn!("skipping empty instance {}", c.instance.id);
            continue;
        }
        let f = in_view_fraction(&c.instance, common_view)?;
        let class = if cfg.in_view(f) {
            c.kind.in_view_class()
        } else {
            ChangeClass::NotInView
        };
        out.push(ClassifiedInstance {
            instance: c.instance.clone(),
            kind: c.kind,
            class,
        });
    }
    Ok(out)
}

/// Paint classified instances with priority 1 > 2 > 3.
pub fn paint_instances(width: usize, height: usize, instances: &[ClassifiedInstance]) -> Result<ChangeMask> {
    paint_by_priority(width, height, instances.iter().map(|i| (i.class, &i.instance.bitmap)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    PendingReview,
    Accepted,
    Discarded,
}

impl ReviewStatus {
    /// Only pending annotations can be decided.
    pub fn transition(self, to: ReviewStatus) -> Result<ReviewStatus> {
        match (self, to) {
            (ReviewStatus::PendingReview, ReviewStatus::Accepted | ReviewStatus::Discarded) => Ok(to),
            _ => Err(ScdError::Conflict(format!("cannot move from {self:?} to {to:?}"))),
        }
    }
}

/// Multi-class pseudo-mask on T1 with the instances it was painted from.
/// The mask is not stored; it is repainted from the instances on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PseudoRecord", try_from = "PseudoRecord")]
pub struct PseudoAnnotation {
    pub pair_id: String,
    pub mask: ChangeMask,
    pub instances: Vec<ClassifiedInstance>,
    pub common_view: CommonViewMask,
    pub caption: CaptionReport,
    pub status: ReviewStatus,
}

#[derive(Serialize, Deserialize)]
struct PseudoRecord {
    pair_id: String,
    width: usize,
    height: usize,
    instances: Vec<ClassifiedInstance>,
    common_view: CommonViewMask,
    caption: CaptionReport,
    status: ReviewStatus,
}

impl From<PseudoAnnotation> for PseudoRecord {
    fn from(p: PseudoAnnotation) -> Self {
        let (width, height) = p.mask.dims();
        Self {
            pair_id: p.pair_id,
            width,
            height,
            instances: p.instances,
            common_view: p.common_view,
            caption: p.caption,
            status: p.status,
        }
    }
}

impl TryFrom<PseudoRecord> for PseudoAnnotation {
    type Error = ScdError;

    fn try_from(r: PseudoRecord) -> Result<Self> {
        let mask = paint_instances(r.width, r.height, &r.instances)?;
        Ok(Self {
            pair_id: r.pair_id,
            mask,
            instances: r.instances,
            common_view: r.common_view,
            caption: r.caption,
            status: r.status,
        })
    }
}

impl PseudoAnnotation {
    /// Drop the named instances and repaint.
    pub fn without_instances(&self, removed: &[String]) -> Result<Self> {
        for id in removed {
            if !self.instances.iter().any(|i| &i.instance.id == id) {
                return Err(ScdError::NotFound(format!("instance {id} in pair {}", self.pair_id)));
            }
        }
        let instances: Vec<ClassifiedInstance> = self
            .instances
            .iter()
            .filter(|i| !removed.contains(&i.instance.id))
            .cloned()
            .collect();
        let (w, h) = self.mask.dims();
        Ok(Self {
            mask: paint_instances(w, h, &instances)?,
            instances,
            ..self.clone()
        })
    }
}

pub fn assemble_pseudo(
    pair: &ImagePair,
    instances: Vec<ClassifiedInstance>,
    common_view: CommonViewMask,
    caption: CaptionReport,
) -> Result<PseudoAnnotation> {
    let (w, h) = pair.dims();
    Ok(PseudoAnnotation {
        pair_id: pair.id.clone(),
        mask: paint_instances(w, h, &instances)?,
        instances,
        common_view,
        caption,
        status: ReviewStatus::PendingReview,
    })
}
