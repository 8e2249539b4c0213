//! Geometric-semantic matching: keep tracker and segmenter instances whose
//! overlap with the initial prediction clears a threshold, and rebuild the
//! change mask from the kept instances.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};
use crate::types::{
    bitmap_overlap_ratio, paint_by_priority, to_binary, union_masks, Bitmap, ChangeClass, ChangeMask, MaskInstance,
    MaskSource,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub alpha_t: f64,
    pub alpha_g: f64,
    /// `alpha > threshold` when set, `alpha >= threshold` otherwise.
    pub strict_inequality: bool,
    /// Compose the final mask as `initial ∪ retained` instead of `retained` only.
    pub keep_initial: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha_t: 0.20,
            alpha_g: 0.10,
            strict_inequality: true,
            keep_initial: false,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_t", self.alpha_t), ("alpha_g", self.alpha_g)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScdError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn passes(&self, alpha: f64, threshold: f64) -> bool {
        if self.strict_inequality {
            alpha > threshold
        } else {
            alpha >= threshold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Geometric,
    Semantic,
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub instance_id: String,
    pub source: MaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    pub alpha: f64,
    pub retained: bool,
}

/// Outcome of thresholding one candidate list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retention {
    pub retained: Vec<MaskInstance>,
    pub records: Vec<ProvenanceRecord>,
    /// Ids of zero-area candidates that were skipped.
    pub skipped_empty: Vec<String>,
}

impl Retention {
    pub fn total_candidates(&self) -> usize {
        self.records.len() + self.skipped_empty.len()
    }
}

fn retain(candidates: &[MaskInstance], initial: &Bitmap, threshold: f64, cfg: &MatchConfig) -> Result<Retention> {
    cfg.validate()?;
    let mut out = Retention::default();
    for c in candidates {
        if c.is_empty() {
            log::warn!("skipping empty candidate {}", c.id);
            out.skipped_empty.push(c.id.clone());
            continue;
        }
        let alpha = bitmap_overlap_ratio(&c.bitmap, initial)?;
        let keep = cfg.passes(alpha, threshold);
        out.records.push(ProvenanceRecord {
            instance_id: c.id.clone(),
            source: c.source,
            phrase: c.phrase.clone(),
            alpha,
            retained: keep,
        });
        if keep {
            out.retained.push(c.clone());
        }
    }
    Ok(out)
}

/// Keep tracker-inconsistent instances with `alpha` above `alpha_t`.
pub fn geometric_match(inconsistent: &[MaskInstance], initial: &Bitmap, cfg: &MatchConfig) -> Result<Retention> {
    retain(inconsistent, initial, cfg.alpha_t, cfg)
}

/// Keep caption-guided segmenter instances with `alpha` above `alpha_g`.
pub fn semantic_match(semantic: &[MaskInstance], initial: &Bitmap, cfg: &MatchConfig) -> Result<Retention> {
    retain(semantic, initial, cfg.alpha_g, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub mask: Bitmap,
    /// No instance survived matching.
    pub no_evidence: bool,
}

/// Union of the retained instances (plus `initial` when `keep_initial`).
pub fn refine(
    initial: &Bitmap,
    geo_retained: &[MaskInstance],
    sem_retained: &[MaskInstance],
    keep_initial: bool,
) -> Result<Refined> {
    let (w, h) = initial.dims();
    let mut mask = union_masks(geo_retained, w, h)?;
    mask.union_in_place(&union_masks(sem_retained, w, h)?)?;
    if keep_initial {
        mask.union_in_place(initial)?;
    }
    Ok(Refined {
        mask,
        no_evidence: geo_retained.is_empty() && sem_retained.is_empty(),
    })
}

/// Both matching stages and the refined mask, with a provenance report.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub mask: Bitmap,
    pub no_evidence: bool,
    pub geometric: Retention,
    pub semantic: Retention,
}

impl Refinement {
    /// `[{instance_id, source, phrase?, alpha, retained}]` over both stages.
    pub fn provenance(&self) -> Vec<ProvenanceRecord> {
        self.geometric
            .records
            .iter()
            .chain(&self.semantic.records)
            .cloned()
            .collect()
    }

    pub fn provenance_json(&self) -> serde_json::Value {
        serde_json::to_value(self.provenance()).expect("provenance serializes")
    }

    pub fn retained_count(&self) -> usize {
        self.geometric.retained.len() + self.semantic.retained.len()
    }

    pub fn candidate_count(&self) -> usize {
        self.geometric.total_candidates() + self.semantic.total_candidates()
    }
}

pub fn match_and_refine(
    initial: &Bitmap,
    inconsistent: &[MaskInstance],
    semantic: &[MaskInstance],
    cfg: &MatchConfig,
) -> Result<Refinement> {
    let geometric = geometric_match(inconsistent, initial, cfg)?;
    let semantic = semantic_match(semantic, initial, cfg)?;
    let refined = refine(initial, &geometric.retained, &semantic.retained, cfg.keep_initial)?;
    Ok(Refinement {
        mask: refined.mask,
        no_evidence: refined.no_evidence,
        geometric,
        semantic,
    })
}

/// Retained instances per change class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassRetained {
    pub object: Vec<MaskInstance>,
    pub appearance: Vec<MaskInstance>,
    /// `None` passes the initial mask's class-3 pixels through unchanged.
    pub not_in_view: Option<Vec<MaskInstance>>,
}

/// Paint retained sets with priority object > appearance > not-in-view.
pub fn refine_multiclass(initial: &ChangeMask, sets: &ClassRetained) -> Result<ChangeMask> {
    let (w, h) = initial.dims();
    let object = union_masks(&sets.object, w, h)?;
    let appearance = union_masks(&sets.appearance, w, h)?;
    let not_in_view = match &sets.not_in_view {
        Some(list) => union_masks(list, w, h)?,
        None if initial.num_classes() == 4 => initial.region(ChangeClass::NotInView.code()),
        None => Bitmap::new(w, h),
    };
    paint_by_priority(
        w,
        h,
        [
            (ChangeClass::ObjectChange, &object),
            (ChangeClass::AppearanceChange, &appearance),
            (ChangeClass::NotInView, &not_in_view),
        ],
    )
}

/// Candidate lists for multi-class refinement.
#[derive(Debug, Clone, Default)]
pub struct MulticlassCandidates {
    pub tracker: Vec<MaskInstance>,
    pub object_phrases: Vec<MaskInstance>,
    pub appearance_phrases: Vec<MaskInstance>,
    pub not_in_view: Option<Vec<MaskInstance>>,
}

/// Threshold every candidate list against the binarized initial mask, then
/// paint by priority. Tracker and object-phrase survivors are class 1,
/// appearance-phrase survivors class 2.
pub fn match_multiclass(
    initial: &ChangeMask,
    candidates: &MulticlassCandidates,
    cfg: &MatchConfig,
) -> Result<ChangeMask> {
    let reference = to_binary(initial);
    let mut object = geometric_match(&candidates.tracker, &reference, cfg)?.retained;
    object.extend(semantic_match(&candidates.object_phrases, &reference, cfg)?.retained);
    let appearance = semantic_match(&candidates.appearance_phrases, &reference, cfg)?.retained;
    refine_multiclass(
        initial,
        &ClassRetained {
            object,
            appearance,
            not_in_view: candidates.not_in_view.clone(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, b: Bitmap, source: MaskSource) -> MaskInstance {
        MaskInstance::new(id, b, source)
    }

    /// 10x10, candidate is a 10-pixel column strip of which `inside` pixels
    /// fall in the reference.
    fn strip_case(inside: usize) -> (MaskInstance, Bitmap) {
        let cand = Bitmap::rect(10, 10, 0, 0, 1, 10);
        let reference = Bitmap::rect(10, 10, 0, 0, 1, inside);
        (inst("c", cand, MaskSource::Tracker), reference)
    }

    #[test]
    fn inside_candidate_retained_below_one() {
        let cand = inst("a", Bitmap::rect(10, 10, 2, 2, 3, 3), MaskSource::Tracker);
        let initial = Bitmap::rect(10, 10, 0, 0, 8, 8);
        for t in [0.0, 0.5, 0.99] {
            let cfg = MatchConfig {
                alpha_t: t,
                ..MatchConfig::default()
            };
            assert_eq!(
                geometric_match(&[cand.clone()], &initial, &cfg).unwrap().retained.len(),
                1
            );
        }
    }

    #[test]
    fn thirty_percent_case() {
        let (cand, reference) = strip_case(3);
        let keep = geometric_match(&[cand.clone()], &reference, &MatchConfig::default()).unwrap();
        assert_eq!(keep.retained.len(), 1);
        assert!((keep.records[0].alpha - 0.3).abs() < 1e-12);
        let cfg = MatchConfig {
            alpha_t: 0.4,
            ..MatchConfig::default()
        };
        assert!(geometric_match(&[cand], &reference, &cfg).unwrap().retained.is_empty());
    }

    #[test]
    fn exact_threshold_is_dropped_unless_non_strict() {
        let (cand, reference) = strip_case(2);
        let cfg = MatchConfig::default();
        assert!(geometric_match(&[cand.clone()], &reference, &cfg)
            .unwrap()
            .retained
            .is_empty());
        let loose = MatchConfig {
            strict_inequality: false,
            ..cfg
        };
        assert_eq!(geometric_match(&[cand], &reference, &loose).unwrap().retained.len(), 1);
    }

    #[test]
    fn semantic_cases() {
        let initial = Bitmap::rect(20, 20, 0, 0, 10, 10);
        let shadow = inst("shadow", Bitmap::rect(20, 20, 12, 12, 5, 5), MaskSource::Segmenter);
        // 13 px column, 3 of them inside the initial square.
        let partial = inst("p", Bitmap::rect(20, 20, 9, 7, 1, 13), MaskSource::Segmenter);
        let r = semantic_match(&[shadow, partial], &initial, &MatchConfig::default()).unwrap();
        assert_eq!(r.records[0].alpha, 0.0);
        assert!(!r.records[0].retained);
        assert!((r.records[1].alpha - 3.0 / 13.0).abs() < 1e-12);
        assert_eq!(r.retained.len(), 1);
    }

    #[test]
    fn fifteen_percent_passes_default_semantic_threshold() {
        let initial = Bitmap::rect(20, 1, 0, 0, 3, 1);
        let cand = inst("s", Bitmap::full(20, 1), MaskSource::Segmenter);
        let r = semantic_match(&[cand], &initial, &MatchConfig::default()).unwrap();
        assert!((r.records[0].alpha - 0.15).abs() < 1e-12);
        assert_eq!(r.retained.len(), 1);
    }

    #[test]
    fn empty_candidates_are_skipped() {
        let initial = Bitmap::full(4, 4);
        let r = geometric_match(
            &[inst("e", Bitmap::new(4, 4), MaskSource::Tracker)],
            &initial,
            &MatchConfig::default(),
        )
        .unwrap();
        assert!(r.retained.is_empty());
        assert_eq!(r.skipped_empty, vec!["e".to_string()]);
    }

    #[test]
    fn completion_beyond_initial() {
        let tracker = inst("t", Bitmap::rect(12, 12, 2, 2, 6, 4), MaskSource::Tracker);
        let initial = Bitmap::rect(12, 12, 2, 2, 3, 4);
        let out = match_and_refine(&initial, &[tracker.clone()], &[], &MatchConfig::default()).unwrap();
        assert_eq!(out.mask, tracker.bitmap);
        assert!(!out.no_evidence);
    }

    #[test]
    fn no_evidence_flag() {
        let initial = Bitmap::rect(8, 8, 0, 0, 4, 4);
        let out = match_and_refine(&initial, &[], &[], &MatchConfig::default()).unwrap();
        assert_eq!(out.mask.area(), 0);
        assert!(out.no_evidence);
        let kept = refine(&initial, &[], &[], true).unwrap();
        assert_eq!(kept.mask, initial);
    }

    #[test]
    fn inclusion_exclusion_area() {
        // 5x4 = 20 and 4x3 = 12 rectangles sharing a 2x2 block.
        let geo = inst("g", Bitmap::rect(10, 10, 0, 0, 5, 4), MaskSource::Tracker);
        let sem = inst("s", Bitmap::rect(10, 10, 3, 2, 4, 3), MaskSource::Segmenter);
        assert_eq!(geo.area(), 20);
        assert_eq!(sem.area(), 12);
        let r = refine(&Bitmap::new(10, 10), &[geo], &[sem], false).unwrap();
        assert_eq!(r.mask.area(), 28);
    }

    #[test]
    fn provenance_json_shape() {
        let initial = Bitmap::rect(4, 4, 0, 0, 2, 2);
        let seg = inst("s1", Bitmap::rect(4, 4, 0, 0, 2, 2), MaskSource::Segmenter).with_phrase("bench");
        let trk = inst("t1", Bitmap::rect(4, 4, 2, 2, 2, 2), MaskSource::Tracker);
        let out = match_and_refine(&initial, &[trk], &[seg], &MatchConfig::default()).unwrap();
        let json = out.provenance_json();
        assert_eq!(
            json,
            serde_json::json!([
                {"instance_id": "t1", "source": "tracker", "alpha": 0.0, "retained": false},
                {"instance_id": "s1", "source": "segmenter", "phrase": "bench", "alpha": 1.0, "retained": true}
            ])
        );
    }

    #[test]
    fn multiclass_priority() {
        let initial = ChangeMask::zeros(6, 6, 4).unwrap();
        let obj = inst("o", Bitmap::rect(6, 6, 0, 0, 3, 3), MaskSource::Tracker);
        let app = inst("a", Bitmap::rect(6, 6, 2, 2, 3, 3), MaskSource::Segmenter);
        let m = refine_multiclass(
            &initial,
            &ClassRetained {
                object: vec![obj],
                appearance: vec![app],
                not_in_view: None,
            },
        )
        .unwrap();
        assert_eq!(m.get(2, 2), 1);
        assert_eq!(m.get(4, 4), 2);
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.get(5, 5), 0);

        let empty = refine_multiclass(&initial, &ClassRetained::default()).unwrap();
        assert!(empty.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn class_three_passes_through_by_default() {
        let mut initial = ChangeMask::zeros(4, 4, 4).unwrap();
        initial.set(3, 3, 3).unwrap();
        initial.set(0, 0, 1).unwrap();
        let m = refine_multiclass(&initial, &ClassRetained::default()).unwrap();
        assert_eq!(m.get(3, 3), 3);
        assert_eq!(m.get(0, 0), 0, "class 1 needs a retained instance");
        let replaced = refine_multiclass(
            &initial,
            &ClassRetained {
                not_in_view: Some(vec![]),
                ..ClassRetained::default()
            },
        )
        .unwrap();
        assert_eq!(replaced.get(3, 3), 0);
    }

    #[test]
    fn threshold_validation() {
        let cfg = MatchConfig {
            alpha_g: 1.5,
            ..MatchConfig::default()
        };
        assert!(geometric_match(&[], &Bitmap::new(2, 2), &cfg).is_err());
    }
}
