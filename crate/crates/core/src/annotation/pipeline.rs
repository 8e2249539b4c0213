//! Per-pair stage runner with on-disk artifacts and a bounded worker pool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    assemble_pseudo, classify_by_view, estimate_common_view, object_match, phrase_queries, segment_open_vocab,
    track_inconsistent, Candidate, CandidateKind, DenseMatcher, PseudoAnnotation, Segmenter, Tracker,
    ViewClassifyConfig,
};
use crate::caption::{CaptionClient, CaptionReport};
use crate::error::{Result, ScdError};
use crate::fsutil;
use crate::types::io::{save_change_mask, save_rgb};
use crate::types::{CommonViewMask, ImagePair, MaskInstance};

pub const PSEUDO_FILE: &str = "06_pseudo.json";
pub const PSEUDO_MASK_FILE: &str = "06_pseudo.png";
const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Caption = 1,
    Segment = 2,
    Track = 3,
    ObjectMatch = 4,
    CommonView = 5,
    Assemble = 6,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Caption,
        Stage::Segment,
        Stage::Track,
        Stage::ObjectMatch,
        Stage::CommonView,
        Stage::Assemble,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Caption => "caption",
            Stage::Segment => "segment",
            Stage::Track => "track",
            Stage::ObjectMatch => "object_match",
            Stage::CommonView => "common_view",
            Stage::Assemble => "pseudo",
        }
    }

    pub fn artifact(self) -> String {
        format!("{:02}_{}.json", self.number(), self.name())
    }
}

pub struct Adapters<'a> {
    pub captioner: &'a CaptionClient,
    pub segmenter: &'a dyn Segmenter,
    pub tracker: &'a dyn Tracker,
    pub matcher: &'a dyn DenseMatcher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub view: ViewClassifyConfig,
    /// Tracker masks need more than this many shared pixels with a segmenter mask.
    pub min_overlap_pixels: usize,
    pub workers: usize,
    /// Stop each pair after this stage, leaving later stages for a resumed run.
    pub halt_after: Option<Stage>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            view: ViewClassifyConfig::default(),
            min_overlap_pixels: 0,
            workers: 4,
            halt_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Completed(PseudoAnnotation),
    Pending { stage: Stage, error: String },
    Halted { after: Stage },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRun {
    pub pair_id: String,
    /// Stages computed in this call; stages restored from disk are absent.
    pub executed: Vec<Stage>,
    pub outcome: PairOutcome,
}

#[derive(Serialize)]
struct LogEntry<'a> {
    stage: Stage,
    event: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

struct PairDir {
    root: PathBuf,
}

impl PairDir {
    fn new(out_dir: &Path, pair_id: &str) -> Result<Self> {
        let valid = !pair_id.is_empty()
            && pair_id != "."
            && pair_id != ".."
            && pair_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !valid {
            return Err(ScdError::InvalidConfig(format!(
                "pair id {pair_id:?} is not a safe directory name"
            )));
        }
        let root = out_dir.join(pair_id);
        fsutil::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage) -> Result<Option<T>> {
        let path = self.root.join(stage.artifact());
        if path.exists() {
            fsutil::read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn store<T: Serialize>(&self, stage: Stage, value: &T) -> Result<()> {
        fsutil::write_json_atomic(&self.root.join(stage.artifact()), value)
    }

    fn log(&self, stage: Stage, event: &str, error: Option<&str>) -> Result<()> {
        let path = self.root.join(LOG_FILE);
        let mut line =
            serde_json::to_vec(&LogEntry { stage, event, error }).map_err(|e| ScdError::json("pipeline log", e))?;
        line.push(b'\n');
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(&line))
            .map_err(|e| ScdError::io(format!("append {}", path.display()), e))
    }

    fn write_if_absent(&self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.root.join(name);
        if path.exists() {
            Ok(())
        } else {
            write(&path)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PairInfo {
    id: String,
    t0_time: chrono::DateTime<chrono::Utc>,
    t1_time: chrono::DateTime<chrono::Utc>,
}

enum Step<T> {
    Done(T),
    Stop(PairOutcome),
}

struct Runner<'a> {
    dir: PairDir,
    cfg: &'a PipelineConfig,
    executed: Vec<Stage>,
}

impl Runner<'_> {
    /// Restore a stage from disk or compute and persist it. Adapter errors
    /// become a pending outcome; store errors propagate.
    fn stage<T, F>(&mut self, stage: Stage, compute: F) -> Result<Step<T>>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let value = match self.dir.load::<T>(stage)? {
            Some(v) => v,
            None => match compute() {
                Ok(v) => {
                    self.dir.store(stage, &v)?;
                    self.dir.log(stage, "completed", None)?;
                    self.executed.push(stage);
                    v
                }
                Err(e) if is_store_error(&e) => return Err(e),
                Err(e) => {
                    let msg = e.to_string();
                    log::warn!(
                        "pair {} pending at stage {}: {msg}",
                        self.dir.root.display(),
                        stage.name()
                    );
                    self.dir.log(stage, "failed", Some(&msg))?;
                    return Ok(Step::Stop(PairOutcome::Pending { stage, error: msg }));
                }
            },
        };
        if self.cfg.halt_after == Some(stage) && stage != Stage::Assemble {
            return Ok(Step::Stop(PairOutcome::Halted { after: stage }));
        }
        Ok(Step::Done(value))
    }
}

fn is_store_error(e: &ScdError) -> bool {
    matches!(e, ScdError::Io { .. } | ScdError::Json { .. })
}

macro_rules! step {
    ($e:expr, $runner:expr, $id:expr) => {
        match $e? {
            Step::Done(v) => v,
            Step::Stop(outcome) => {
                return Ok(PairRun {
                    pair_id: $id,
                    executed: $runner.executed,
                    outcome,
                })
            }
        }
    };
}

/// Run all six stages for one pair under `out_dir/<pair id>/`, skipping
/// stages whose artifact already exists. Existing artifacts are never
/// rewritten.
pub fn run_pipeline(
    pair: &ImagePair,
    adapters: &Adapters<'_>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PairRun> {
    cfg.view.validate()?;
    let dir = PairDir::new(out_dir, &pair.id)?;
    dir.write_if_absent("t0.png", |p| save_rgb(&pair.image_t0, p))?;
    dir.write_if_absent("t1.png", |p| save_rgb(&pair.image_t1, p))?;
    dir.write_if_absent("pair.json", |p| {
        fsutil::write_json_atomic(
            p,
            &PairInfo {
                id: pair.id.clone(),
                t0_time: pair.capture_t0,
                t1_time: pair.capture_t1,
            },
        )
    })?;
    let mut r = Runner {
        dir,
        cfg,
        executed: Vec::new(),
    };
    let id = pair.id.clone();

    let caption: CaptionReport = step!(r.stage(Stage::Caption, || adapters.captioner.caption_pair(pair)), r, id);
    let segments: Vec<Candidate> = step!(
        r.stage(Stage::Segment, || segment_open_vocab(
            &pair.image_t1,
            &phrase_queries(&caption),
            adapters.segmenter
        )),
        r,
        id
    );
    let tracked: Vec<MaskInstance> = step!(
        r.stage(Stage::Track, || track_inconsistent(pair, adapters.tracker)),
        r,
        id
    );
    let matched: Vec<MaskInstance> = step!(
        r.stage(Stage::ObjectMatch, || {
            let objects: Vec<MaskInstance> = segments
                .iter()
                .filter(|c| c.kind == CandidateKind::Object)
                .map(|c| c.instance.clone())
                .collect();
            object_match(&tracked, &objects, cfg.min_overlap_pixels)
        }),
        r,
        id
    );
    let common_view: CommonViewMask = step!(
        r.stage(Stage::CommonView, || estimate_common_view(pair, adapters.matcher)),
        r,
        id
    );
    let pseudo: PseudoAnnotation = step!(
        r.stage(Stage::Assemble, || {
            let mut candidates: Vec<Candidate> = matched
                .iter()
                .map(|m| Candidate {
                    instance: m.clone(),
                    kind: CandidateKind::Object,
                })
                .collect();
            candidates.extend(segments.iter().filter(|c| c.kind == CandidateKind::Appearance).cloned());
            let classified = classify_by_view(&candidates, &common_view, &cfg.view)?;
            assemble_pseudo(pair, classified, common_view.clone(), caption.clone())
        }),
        r,
        id
    );
    r.dir
        .write_if_absent(PSEUDO_MASK_FILE, |p| save_change_mask(&pseudo.mask, p))?;
    Ok(PairRun {
        pair_id: id,
        executed: r.executed,
        outcome: PairOutcome::Completed(pseudo),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPair {
    pub pair_id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub completed: Vec<String>,
    pub pending: Vec<PendingPair>,
    pub halted: Vec<String>,
}

/// Run every pair through a pool of `cfg.workers` threads. Adapter failures
/// leave the pair pending; the batch continues. Results are reported in
/// input order and written to `out_dir/summary.json`.
pub fn run_batch(
    pairs: &[ImagePair],
    adapters: &Adapters<'_>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<BatchReport> {
    let workers = cfg.workers.max(1).min(pairs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<PairRun>>>> = Mutex::new((0..pairs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pairs.len() {
                    break;
                }
                let run = run_pipeline(&pairs[i], adapters, cfg, out_dir);
                results.lock().expect("results lock")[i] = Some(run);
            });
        }
    });
    let mut report = BatchReport::default();
    for run in results.into_inner().expect("results lock") {
        let run = run.expect("every pair is visited")?;
        match run.outcome {
            PairOutcome::Completed(_) => report.completed.push(run.pair_id),
            PairOutcome::Pending { stage, error } => report.pending.push(PendingPair {
                pair_id: run.pair_id,
                stage,
                error,
            }),
            PairOutcome::Halted { .. } => report.halted.push(run.pair_id),
        }
    }
    fsutil::write_json_atomic(&out_dir.join("summary.json"), &report)?;
    Ok(report)
}
