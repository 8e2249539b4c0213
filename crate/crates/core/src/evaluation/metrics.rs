use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};
use crate::types::{to_binary, ChangeClass, ChangeMask};

/// Per-class pixel counts. `fn_` avoids the keyword.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub num_classes: u8,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn empty(num_classes: u8) -> Self {
        let k = num_classes as usize;
        Self {
            num_classes,
            tp: vec![0; k],
            fp: vec![0; k],
            fn_: vec![0; k],
            total: 0,
        }
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(ScdError::Shape(format!(
                "merging {}-class and {}-class counts",
                self.num_classes, other.num_classes
            )));
        }
        for k in 0..self.num_classes as usize {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
            self.fn_[k] += other.fn_[k];
        }
        self.total += other.total;
        Ok(())
    }

    /// A class takes part in scoring when it appears in prediction or ground truth.
    pub fn is_present(&self, class: usize) -> bool {
        self.tp[class] + self.fp[class] + self.fn_[class] > 0
    }
}

pub fn confusion(pred: &ChangeMask, gt: &ChangeMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(ScdError::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if pred.num_classes() != gt.num_classes() {
        return Err(ScdError::Shape(format!(
            "prediction has {} classes, ground truth {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    let mut counts = ConfusionCounts::empty(gt.num_classes());
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            counts.tp[g as usize] += 1;
        } else {
            counts.fp[p as usize] += 1;
            counts.fn_[g as usize] += 1;
        }
    }
    counts.total = gt.labels().len() as u64;
    Ok(counts)
}

/// Binary counts of both masks after collapsing every nonzero class to change.
pub fn binary_confusion(pred: &ChangeMask, gt: &ChangeMask) -> Result<ConfusionCounts> {
    confusion(
        &ChangeMask::from_bitmap(&to_binary(pred)),
        &ChangeMask::from_bitmap(&to_binary(gt)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub f1: f64,
    pub iou: f64,
    /// Both scores were 0/0 and are reported as 0.
    pub undefined: bool,
}

pub fn f1_iou(counts: &ConfusionCounts, class: usize) -> ClassScore {
    let tp = counts.tp[class] as f64;
    let fp = counts.fp[class] as f64;
    let fn_ = counts.fn_[class] as f64;
    let denom = tp + fp + fn_;
    if denom == 0.0 {
        return ClassScore {
            f1: 0.0,
            iou: 0.0,
            undefined: true,
        };
    }
    ClassScore {
        f1: 2.0 * tp / (2.0 * tp + fp + fn_),
        iou: tp / denom,
        undefined: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub macro_f1: f64,
    pub miou: f64,
    pub per_class: Vec<ClassScore>,
    /// Classes left out of the mean because they never occur.
    pub excluded: Vec<u8>,
}

/// Unweighted mean over classes; classes absent from `counts` are excluded.
pub fn macro_scores(counts: &ConfusionCounts) -> MacroScores {
    let per_class: Vec<ClassScore> = (0..counts.num_classes as usize).map(|k| f1_iou(counts, k)).collect();
    let mut f1 = Vec::new();
    let mut iou = Vec::new();
    let mut excluded = Vec::new();
    for (k, s) in per_class.iter().enumerate() {
        if s.undefined {
            excluded.push(k as u8);
        } else {
            f1.push(s.f1);
            iou.push(s.iou);
        }
    }
    MacroScores {
        macro_f1: mean(&f1),
        miou: mean(&iou),
        per_class,
        excluded,
    }
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Sum counts over the whole set, then score.
    #[default]
    Pooled,
    /// Score each image, then average over images where the class occurs.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: u8,
    pub averaging: Averaging,
    pub images: usize,
    /// Change-vs-no-change score after collapsing classes.
    pub binary: ClassScore,
    /// Per-class and macro scores; present for 4-class inputs.
    pub multiclass: Option<MacroScores>,
    pub counts: ConfusionCounts,
}

impl EvalReport {
    /// Model-selection score: macro F1 for multi-class, change F1 otherwise.
    pub fn selection_f1(&self) -> f64 {
        self.multiclass.as_ref().map(|m| m.macro_f1).unwrap_or(self.binary.f1)
    }

    pub fn selection_iou(&self) -> f64 {
        self.multiclass.as_ref().map(|m| m.miou).unwrap_or(self.binary.iou)
    }
}

pub fn evaluate(pairs: &[(ChangeMask, ChangeMask)], averaging: Averaging) -> Result<EvalReport> {
    let Some((_, first_gt)) = pairs.first() else {
        return Err(ScdError::InvalidConfig("empty evaluation set".into()));
    };
    let k = first_gt.num_classes();
    let mut pooled = ConfusionCounts::empty(k);
    let mut pooled_binary = ConfusionCounts::empty(2);
    let mut per_image = Vec::with_capacity(pairs.len());
    for (pred, gt) in pairs {
        let c = confusion(pred, gt)?;
        let b = binary_confusion(pred, gt)?;
        pooled.merge(&c)?;
        pooled_binary.merge(&b)?;
        per_image.push((c, b));
    }
    let (binary, multiclass) = match averaging {
        Averaging::Pooled => (f1_iou(&pooled_binary, 1), (k == 4).then(|| macro_scores(&pooled))),
        Averaging::PerImage => {
            let binary = mean_class_score(per_image.iter().map(|(_, b)| b), 1);
            let multiclass = (k == 4).then(|| {
                let per_class: Vec<ClassScore> = (0..4)
                    .map(|class| mean_class_score(per_image.iter().map(|(c, _)| c), class))
                    .collect();
                let mut excluded = Vec::new();
                let mut f1 = Vec::new();
                let mut iou = Vec::new();
                for (class, s) in per_class.iter().enumerate() {
                    if s.undefined {
                        excluded.push(class as u8);
                    } else {
                        f1.push(s.f1);
                        iou.push(s.iou);
                    }
                }
                MacroScores {
                    macro_f1: mean(&f1),
                    miou: mean(&iou),
                    per_class,
                    excluded,
                }
            });
            (binary, multiclass)
        }
    };
    Ok(EvalReport {
        num_classes: k,
        averaging,
        images: pairs.len(),
        binary,
        multiclass,
        counts: pooled,
    })
}

/// Mean of one class's scores over the images where it is defined.
fn mean_class_score<'a>(counts: impl Iterator<Item = &'a ConfusionCounts>, class: usize) -> ClassScore {
    let scores: Vec<ClassScore> = counts.map(|c| f1_iou(c, class)).filter(|s| !s.undefined).collect();
    if scores.is_empty() {
        return ClassScore {
            f1: 0.0,
            iou: 0.0,
            undefined: true,
        };
    }
    ClassScore {
        f1: mean(&scores.iter().map(|s| s.f1).collect::<Vec<_>>()),
        iou: mean(&scores.iter().map(|s| s.iou).collect::<Vec<_>>()),
        undefined: false,
    }
}

/// Display label of a class row, e.g. `1. object_change`.
pub fn class_label(class: u8) -> String {
    match ChangeClass::from_code(class) {
        Some(c) => format!("{}. {}", class, c.name()),
        None => class.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, k: u8, labels: &[u8]) -> ChangeMask {
        ChangeMask::from_labels(w, h, k, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let gt = mask(3, 2, 4, &[0, 1, 2, 3, 1, 0]);
        let c = confusion(&gt, &gt).unwrap();
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
        let m = macro_scores(&c);
        assert_eq!((m.macro_f1, m.miou), (1.0, 1.0));
    }

    #[test]
    fn all_zero_prediction_misses_changes() {
        let mut labels = vec![0u8; 100];
        labels[..30].fill(1);
        let gt = mask(10, 10, 2, &labels);
        let pred = ChangeMask::zeros(10, 10, 2).unwrap();
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!(c.fn_[1], 30);
        assert_eq!(c.tp[1], 0);
    }

    #[test]
    fn formula_arithmetic() {
        let c = ConfusionCounts {
            num_classes: 2,
            tp: vec![0, 30],
            fp: vec![0, 10],
            fn_: vec![0, 10],
            total: 50,
        };
        let s = f1_iou(&c, 1);
        assert!((s.f1 - 0.75).abs() < 1e-12);
        assert!((s.iou - 0.60).abs() < 1e-12);
        assert!(f1_iou(&c, 0).undefined);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = ChangeMask::zeros(4, 4, 2).unwrap();
        assert!(confusion(&a, &ChangeMask::zeros(4, 5, 2).unwrap()).is_err());
        assert!(confusion(&a, &ChangeMask::zeros(4, 4, 4).unwrap()).is_err());
        assert!(evaluate(&[], Averaging::Pooled).is_err());
    }

    #[test]
    fn macro_excludes_absent_classes() {
        let gt = mask(2, 2, 4, &[0, 1, 1, 0]);
        let m = macro_scores(&confusion(&gt, &gt).unwrap());
        assert_eq!(m.excluded, vec![2, 3]);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn per_image_skips_images_without_the_class() {
        let gt_a = mask(2, 1, 2, &[1, 0]);
        let gt_b = mask(2, 1, 2, &[0, 0]);
        let pairs = vec![(gt_a.clone(), gt_a), (gt_b.clone(), gt_b)];
        let r = evaluate(&pairs, Averaging::PerImage).unwrap();
        assert_eq!(r.binary.f1, 1.0);
        assert_eq!(r.images, 2);
    }

    #[test]
    fn binary_view_of_multiclass() {
        let pred = mask(4, 1, 4, &[2, 1, 0, 3]);
        let gt = mask(4, 1, 4, &[1, 1, 0, 0]);
        let b = binary_confusion(&pred, &gt).unwrap();
        assert_eq!((b.tp[1], b.fp[1], b.fn_[1]), (2, 1, 0));
    }
}
