//! Inference for one pair: caption, model forward, then geometric and
//! semantic refinement of the initial mask.

use std::time::{Duration, Instant};

use crate::annotation::{phrase_queries, segment_open_vocab, track_inconsistent, CandidateKind, Segmenter, Tracker};
use crate::backbone::ScdModel;
use crate::caption::{CaptionClient, CaptionReport};
use crate::enhancer::TextEncoder;
use crate::error::Result;
use crate::evaluation::ProfiledPipeline;
use crate::matching::{match_and_refine, match_multiclass, MatchConfig, MulticlassCandidates, Refinement};
use crate::types::{to_binary, ChangeMask, ImagePair, MaskInstance};

pub const STAGE_NAMES: [&str; 3] = ["caption", "text+visual forward", "refinement"];

#[derive(Clone, Copy)]
pub struct InferenceAdapters<'a> {
    pub captioner: &'a CaptionClient,
    pub text_encoder: &'a dyn TextEncoder,
    pub segmenter: &'a dyn Segmenter,
    pub tracker: &'a dyn Tracker,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub caption: CaptionReport,
    /// Model output at the model's input resolution.
    pub initial: ChangeMask,
    /// Refined mask with the model's class count.
    pub refined: ChangeMask,
    /// Binary matching record, for provenance.
    pub refinement: Refinement,
    /// Wall-clock per stage, in `STAGE_NAMES` order.
    pub timings: [Duration; 3],
}

/// All mask math runs at the model's input resolution; the pair is
/// resampled before the tracker and segmenter see it.
pub fn infer(
    model: &ScdModel,
    pair: &ImagePair,
    adapters: &InferenceAdapters<'_>,
    cfg: &MatchConfig,
) -> Result<Inference> {
    cfg.validate()?;
    let r = model.config().backbone.input_resolution;
    let pair = pair.clone().resampled(r);

    let start = Instant::now();
    let caption = adapters.captioner.caption_pair(&pair)?;
    let t_caption = start.elapsed();

    let start = Instant::now();
    let initial = model.predict_initial_mask(&pair, &caption, adapters.text_encoder)?;
    let t_forward = start.elapsed();

    let start = Instant::now();
    let tracker = track_inconsistent(&pair, adapters.tracker)?;
    let candidates = segment_open_vocab(&pair.image_t1, &phrase_queries(&caption), adapters.segmenter)?;
    let semantic: Vec<MaskInstance> = candidates.iter().map(|c| c.instance.clone()).collect();
    let refinement = match_and_refine(&to_binary(&initial), &tracker, &semantic, cfg)?;
    let refined = if initial.num_classes() == 2 {
        ChangeMask::from_bitmap(&refinement.mask)
    } else {
        let of_kind = |k: CandidateKind| {
            candidates
                .iter()
                .filter(|c| c.kind == k)
                .map(|c| c.instance.clone())
                .collect::<Vec<_>>()
        };
        let multi = MulticlassCandidates {
            tracker,
            object_phrases: of_kind(CandidateKind::Object),
            appearance_phrases: of_kind(CandidateKind::Appearance),
            not_in_view: None,
        };
        match_multiclass(&initial, &multi, cfg)?
    };
    let t_refine = start.elapsed();

    Ok(Inference {
        caption,
        initial,
        refined,
        refinement,
        timings: [t_caption, t_forward, t_refine],
    })
}

/// `infer` bound to a model and adapters, for latency profiling.
pub struct InferencePipeline<'a> {
    pub model: &'a ScdModel,
    pub adapters: InferenceAdapters<'a>,
    pub config: MatchConfig,
}

impl ProfiledPipeline for InferencePipeline<'_> {
    fn stage_names(&self) -> Vec<String> {
        STAGE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn run_timed(&self, pair: &ImagePair) -> Result<Vec<Duration>> {
        Ok(infer(self.model, pair, &self.adapters, &self.config)?.timings.to_vec())
    }
}
