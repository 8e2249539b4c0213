//! File-backed adapter outputs. The foundation models sit behind the core
//! adapter traits; these fixtures replay recorded outputs so the CLI runs
//! end to end without them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use scd_core::annotation::{Adapters, ScriptedMatcher, ScriptedSegmenter, ScriptedTracker};
use scd_core::caption::{CaptionClient, GenerationParams, ScriptedCaptioner};
use scd_core::curation::ScriptedRetriever;
use scd_core::synthetic::AnnotationScene;
use scd_core::{Bitmap, ImagePair};
use serde::{Deserialize, Serialize};

/// Recorded adapter outputs for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFixture {
    /// Raw captioner reply to the object prompt.
    pub object_response: String,
    /// Raw captioner reply to the vegetation prompt.
    pub vegetation_response: String,
    /// Segmenter masks on T1 per phrase.
    #[serde(default)]
    pub segments: BTreeMap<String, Vec<Bitmap>>,
    #[serde(default)]
    pub tracker: Vec<Bitmap>,
    /// Common-view mask; absent means the whole image.
    #[serde(default)]
    pub common_view: Option<Bitmap>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterFixtures {
    pub pairs: BTreeMap<String, PairFixture>,
}

/// Scripted adapters loaded from fixtures.
pub struct ScriptedAdapters {
    pub captioner: CaptionClient,
    pub segmenter: ScriptedSegmenter,
    pub tracker: ScriptedTracker,
    pub matcher: ScriptedMatcher,
}

impl ScriptedAdapters {
    pub fn adapters(&self) -> Adapters<'_> {
        Adapters {
            captioner: &self.captioner,
            segmenter: &self.segmenter,
            tracker: &self.tracker,
            matcher: &self.matcher,
        }
    }
}

impl AdapterFixtures {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        scd_core::fsutil::read_json(path).with_context(|| format!("adapter fixtures {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        Ok(scd_core::fsutil::write_json_atomic(path, self)?)
    }

    pub fn from_scenes(scenes: &[AnnotationScene]) -> Self {
        let pairs = scenes
            .iter()
            .map(|s| {
                let f = PairFixture {
                    object_response: s.object_response(),
                    vegetation_response: s.vegetation_response(),
                    segments: s.segments.iter().cloned().collect(),
                    tracker: s.tracker.clone(),
                    common_view: Some(s.common_view.clone()),
                };
                (s.pair.id.clone(), f)
            })
            .collect();
        Self { pairs }
    }

    /// Scripts fakes against the loaded images. Every pair needs an entry;
    /// mask sizes must equal the pair's processing resolution.
    pub fn script(&self, pairs: &[ImagePair], params: GenerationParams) -> anyhow::Result<ScriptedAdapters> {
        let captioner = Arc::new(ScriptedCaptioner::new());
        let segmenter = ScriptedSegmenter::new();
        let tracker = ScriptedTracker::new();
        let matcher = ScriptedMatcher::new();
        for pair in pairs {
            let Some(f) = self.pairs.get(&pair.id) else {
                bail!("no adapter fixture for pair {}", pair.id);
            };
            let dims = pair.dims();
            let masks = f.segments.values().flatten().chain(&f.tracker).chain(&f.common_view);
            if let Some(bad) = masks.into_iter().find(|m| m.dims() != dims) {
                bail!(
                    "pair {}: fixture mask is {:?}, images are {:?}",
                    pair.id,
                    bad.dims(),
                    dims
                );
            }
            captioner.script(pair, &f.object_response, &f.vegetation_response)?;
            for (phrase, masks) in &f.segments {
                segmenter.script(&pair.image_t1, phrase, masks.clone());
            }
            tracker.script(&pair.image_t0, &pair.image_t1, f.tracker.clone());
            if let Some(cv) = &f.common_view {
                matcher.script(&pair.image_t0, &pair.image_t1, cv.clone());
            }
        }
        Ok(ScriptedAdapters {
            captioner: CaptionClient::new(captioner, params)?,
            segmenter,
            tracker,
            matcher,
        })
    }
}

/// Recorded top-1 retrievals: database id to `(query id, score)`.
pub type RetrievalFixture = BTreeMap<String, (String, f64)>;

pub fn scripted_retriever(fixture: &RetrievalFixture) -> ScriptedRetriever {
    let r = ScriptedRetriever::new();
    for (db, (q, score)) in fixture {
        r.script(db, q, *score);
    }
    r
}
