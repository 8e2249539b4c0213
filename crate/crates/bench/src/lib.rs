//! Shared inputs for the benchmarks.

use scd_core::matching::MatchConfig;
use scd_core::synthetic::annotation_scenes;
use scd_core::{Bitmap, MaskInstance, MaskSource};

/// Initial mask plus tracker and segmenter candidates at `size`.
pub fn matching_inputs(size: u32, seed: u64) -> (Bitmap, Vec<MaskInstance>, Vec<MaskInstance>) {
    let scene = annotation_scenes(1, size, seed).expect("scene").remove(0);
    let s = size as usize;
    let initial = Bitmap::from_fn(s, s, |x, y| (x / 8 + y / 8) % 3 == 0);
    let tracker = scene
        .tracker
        .iter()
        .enumerate()
        .map(|(k, b)| MaskInstance::new(format!("t{k}"), b.clone(), MaskSource::Tracker))
        .collect();
    let semantic = scene
        .segments
        .iter()
        .flat_map(|(p, ms)| ms.iter().map(move |b| (p.clone(), b.clone())))
        .enumerate()
        .map(|(k, (p, b))| MaskInstance::new(format!("g{k}"), b, MaskSource::Segmenter).with_phrase(p))
        .collect();
    (initial, tracker, semantic)
}

pub fn default_match() -> MatchConfig {
    MatchConfig::default()
}
