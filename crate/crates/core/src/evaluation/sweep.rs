use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::ConfusionCounts;
use crate::error::{Result, ScdError};
use crate::matching::{match_and_refine, MatchConfig};
use crate::types::{Bitmap, ChangeMask, MaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStage {
    Geometric,
    Semantic,
}

impl std::str::FromStr for SweepStage {
    type Err = ScdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geo" | "geometric" => Ok(SweepStage::Geometric),
            "sem" | "semantic" => Ok(SweepStage::Semantic),
            other => Err(ScdError::InvalidConfig(format!("unknown sweep stage {other:?}"))),
        }
    }
}

/// One validation pair with its candidate sets and binary ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub pair_id: String,
    pub initial: Bitmap,
    pub tracker: Vec<MaskInstance>,
    pub semantic: Vec<MaskInstance>,
    pub ground_truth: Bitmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Retained over total candidates of the swept stage.
    pub matched_ratio: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    retained: usize,
    candidates: usize,
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Tally {
    fn add(self, o: Tally) -> Tally {
        Tally {
            retained: self.retained + o.retained,
            candidates: self.candidates + o.candidates,
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Refine every sample at each threshold of `grid` for the swept stage,
/// holding the other threshold at its value in `base`. Rows are sorted by
/// threshold; metrics pool pixels over the whole set.
pub fn sweep(samples: &[SweepSample], stage: SweepStage, grid: &[f64], base: &MatchConfig) -> Result<Vec<SweepRow>> {
    if samples.is_empty() {
        return Err(ScdError::InvalidConfig("empty validation set".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        let cfg = match stage {
            SweepStage::Geometric => MatchConfig { alpha_t: t, ..*base },
            SweepStage::Semantic => MatchConfig { alpha_g: t, ..*base },
        };
        cfg.validate()?;
        let tally = samples
            .par_iter()
            .map(|s| -> Result<Tally> {
                let r = match_and_refine(&s.initial, &s.tracker, &s.semantic, &cfg)?;
                let swept = match stage {
                    SweepStage::Geometric => &r.geometric,
                    SweepStage::Semantic => &r.semantic,
                };
                let tp = r.mask.intersection_area(&s.ground_truth)? as u64;
                Ok(Tally {
                    retained: swept.retained.len(),
                    candidates: swept.total_candidates(),
                    tp,
                    fp: r.mask.area() as u64 - tp,
                    fn_: s.ground_truth.area() as u64 - tp,
                })
            })
            .try_reduce(Tally::default, |a, b| Ok(a.add(b)))?;
        let (tp, fp, fn_) = (tally.tp as f64, tally.fp as f64, tally.fn_ as f64);
        rows.push(SweepRow {
            threshold: t,
            matched_ratio: ratio(tally.retained as f64, tally.candidates as f64),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            iou: ratio(tp, tp + fp + fn_),
        });
    }
    Ok(rows)
}

/// Pooled per-pair confusion with an associative parallel reduction.
pub fn pooled_confusion(pairs: &[(ChangeMask, ChangeMask)], num_classes: u8) -> Result<ConfusionCounts> {
    pairs
        .par_iter()
        .map(|(p, g)| super::metrics::confusion(p, g))
        .try_reduce(
            || ConfusionCounts::empty(num_classes),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}
