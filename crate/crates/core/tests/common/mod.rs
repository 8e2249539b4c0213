//! Scripted adapters and the stage-by-stage pseudo-mask oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use scd_core::annotation::{Adapters, ScriptedMatcher, ScriptedSegmenter, ScriptedTracker};
use scd_core::caption::{CaptionClient, GenerationParams, ScriptedCaptioner};
use scd_core::synthetic::AnnotationScene;
use scd_core::Bitmap;

pub struct Fakes {
    pub captioner: Arc<ScriptedCaptioner>,
    pub client: CaptionClient,
    pub segmenter: ScriptedSegmenter,
    pub tracker: ScriptedTracker,
    pub matcher: ScriptedMatcher,
}

impl Fakes {
    pub fn new(scenes: &[AnnotationScene]) -> Self {
        let captioner = Arc::new(ScriptedCaptioner::new());
        let params = GenerationParams {
            inter_call_pause: 0.0,
            ..GenerationParams::default()
        };
        let client = CaptionClient::new(captioner.clone(), params).unwrap();
        let f = Self {
            captioner,
            client,
            segmenter: ScriptedSegmenter::new(),
            tracker: ScriptedTracker::new(),
            matcher: ScriptedMatcher::new(),
        };
        for s in scenes {
            s.script(&f.captioner, &f.segmenter, &f.tracker, &f.matcher).unwrap();
        }
        f
    }

    pub fn adapters(&self) -> Adapters<'_> {
        Adapters {
            captioner: &self.client,
            segmenter: &self.segmenter,
            tracker: &self.tracker,
            matcher: &self.matcher,
        }
    }
}

/// Per-pixel label the pipeline should produce, from brute-force counts.
pub fn oracle(scene: &AnnotationScene) -> Vec<u8> {
    let (w, h) = scene.pair.dims();
    let px = |b: &Bitmap| -> Vec<usize> { (0..w * h).filter(|&i| b.get(i % w, i / w)).collect() };
    let object_masks: Vec<&Bitmap> = scene
        .segments
        .iter()
        .filter(|(p, _)| scene.object_phrases.contains(p))
        .flat_map(|(_, m)| m)
        .collect();
    let veg_masks: Vec<&Bitmap> = scene
        .segments
        .iter()
        .filter(|(p, _)| scene.vegetation_phrases.contains(p))
        .flat_map(|(_, m)| m)
        .collect();
    let mut instances: Vec<(Vec<usize>, u8)> = Vec::new();
    for t in &scene.tracker {
        let tp = px(t);
        let touches = object_masks.iter().any(|g| tp.iter().any(|&i| g.get(i % w, i / w)));
        if touches && !tp.is_empty() {
            instances.push((tp, 1));
        }
    }
    for v in veg_masks {
        instances.push((px(v), 2));
    }
    let mut labels = vec![0u8; w * h];
    for (pixels, in_view_class) in instances {
        let inside = pixels.iter().filter(|&&i| scene.common_view.get(i % w, i / w)).count();
        let class = if inside as f64 / pixels.len() as f64 >= 0.5 {
            in_view_class
        } else {
            3
        };
        for i in pixels {
            let rank = |c: u8| if c == 0 { 9 } else { c };
            if rank(class) < rank(labels[i]) {
                labels[i] = class;
            }
        }
    }
    labels
}

pub fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.insert(rel, std::fs::read(&entry).unwrap());
    }
    out
}

pub fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}
