//! Pair construction from place-recognition retrieval, temporal and seasonal
//! constraints, seeded splits and curation statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Datelike, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{PseudoAnnotation, ReviewStatus};
use crate::error::{Result, ScdError};
use crate::fsutil;
use crate::types::io::load_rgb;
use crate::types::{ChangeClass, ImagePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quarter {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quarter {
    pub fn of(ts: &DateTime<Utc>) -> Quarter {
        match ts.month() {
            1..=3 => Quarter::Q1,
            4..=6 => Quarter::Q2,
            7..=9 => Quarter::Q3,
            _ => Quarter::Q4,
        }
    }

    /// Q1 pairs with Q3, Q2 with Q4.
    pub fn opposite(self) -> Quarter {
        match self {
            Quarter::Q1 => Quarter::Q3,
            Quarter::Q2 => Quarter::Q4,
            Quarter::Q3 => Quarter::Q1,
            Quarter::Q4 => Quarter::Q2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

/// One geotagged capture. `quarter` is derived from `timestamp`; a stored
/// value that disagrees is rejected on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImageRecordRepr")]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub gps: GeoPoint,
    pub timestamp: DateTime<Utc>,
    pub quarter: Quarter,
}

#[derive(Deserialize)]
struct ImageRecordRepr {
    id: String,
    path: PathBuf,
    gps: GeoPoint,
    timestamp: DateTime<Utc>,
    #[serde(default)]
    quarter: Option<Quarter>,
}

impl TryFrom<ImageRecordRepr> for ImageRecord {
    type Error = ScdError;

    fn try_from(r: ImageRecordRepr) -> Result<Self> {
        let rec = ImageRecord::new(r.id, r.path, r.gps, r.timestamp);
        if let Some(q) = r.quarter {
            if q != rec.quarter {
                return Err(ScdError::InvalidConfig(format!(
                    "image {}: quarter {q:?} does not match timestamp {}",
                    rec.id, rec.timestamp
                )));
            }
        }
        Ok(rec)
    }
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, gps: GeoPoint, timestamp: DateTime<Utc>) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            gps,
            quarter: Quarter::of(&timestamp),
            timestamp,
        }
    }
}

/// Visual place recognition: the `k` best matches for `image` among `pool`,
/// as `(id, score)` in descending score order.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, image: &ImageRecord, pool: &[ImageRecord], k: usize) -> Result<Vec<(String, f64)>>;
}

/// Replay retriever with a fixed top-1 per database id.
#[derive(Default)]
pub struct ScriptedRetriever {
    top1: Mutex<HashMap<String, (String, f64)>>,
    failing: Mutex<BTreeSet<String>>,
}

impl ScriptedRetriever {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, database_id: &str, query_id: &str, score: f64) {
        self.top1
            .lock()
            .expect("lock")
            .insert(database_id.to_string(), (query_id.to_string(), score));
    }

    pub fn fail_for(&self, database_id: &str) {
        self.failing.lock().expect("lock").insert(database_id.to_string());
    }
}

impl Retriever for ScriptedRetriever {
    fn retrieve(&self, image: &ImageRecord, pool: &[ImageRecord], k: usize) -> Result<Vec<(String, f64)>> {
        if self.failing.lock().expect("lock").contains(&image.id) {
            return Err(ScdError::RetrieverUnavailable(format!(
                "scripted failure for {}",
                image.id
            )));
        }
        let hit = self.top1.lock().expect("lock").get(&image.id).cloned();
        Ok(hit
            .filter(|(q, _)| k > 0 && pool.iter().any(|p| &p.id == q))
            .into_iter()
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    QuarterConstraint,
    TemporalGap,
    NoResult,
    DuplicateQuery,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::QuarterConstraint => "quarter_constraint",
            RejectReason::TemporalGap => "temporal_gap",
            RejectReason::NoResult => "no_result",
            RejectReason::DuplicateQuery => "duplicate_query",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub database_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub reason: RejectReason,
}

/// Pair manifest entry. T0 is the earlier capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub t0_path: PathBuf,
    pub t1_path: PathBuf,
    pub t0_time: DateTime<Utc>,
    pub t1_time: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub database_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_score: Option<f64>,
}

impl PairRecord {
    /// Load both images, resolving relative paths against `base`, resampled
    /// to `resolution` when given.
    pub fn load(&self, base: &Path, resolution: Option<u32>) -> Result<ImagePair> {
        let t0 = load_rgb(&base.join(&self.t0_path))?;
        let t1 = load_rgb(&base.join(&self.t1_path))?;
        let mut pair = ImagePair::new(&self.id, t0, t1, self.t0_time, self.t1_time)?;
        pair.retrieval_score = self.retrieval_score;
        Ok(match resolution {
            Some(r) => pair.resampled(r),
            None => pair,
        })
    }
}

pub fn load_pair_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    fsutil::read_json(path)
}

pub fn save_pair_manifest(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    fsutil::write_json_atomic(path, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub min_gap_days: i64,
    /// Reject a pair whose query was already used by an earlier database image.
    pub unique_queries: bool,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            min_gap_days: 90,
            unique_queries: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub pairs: Vec<PairRecord>,
    pub rejections: Vec<Rejection>,
}

/// Whole days between two captures, order-independent.
pub fn gap_days(a: &DateTime<Utc>, b: &DateTime<Utc>) -> i64 {
    (*a - *b).num_days().abs()
}

/// Pair each database image with its top-1 retrieval among `queries`, then
/// apply the quarter rule and the minimum temporal gap.
pub fn build_pairs(
    database: &[ImageRecord],
    queries: &[ImageRecord],
    retriever: &dyn Retriever,
    cfg: &PairingConfig,
) -> Result<PairingReport> {
    if queries.is_empty() {
        return Err(ScdError::InvalidConfig("empty query pool".into()));
    }
    let by_id: HashMap<&str, &ImageRecord> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut used = BTreeSet::new();
    let mut report = PairingReport::default();
    for db in database {
        let hits = retriever.retrieve(db, queries, 1).map_err(|e| match e {
            ScdError::RetrieverUnavailable(_) => e,
            other => ScdError::RetrieverUnavailable(other.to_string()),
        })?;
        let reject = |reason, query_id: Option<&str>| Rejection {
            database_id: db.id.clone(),
            query_id: query_id.map(str::to_string),
            reason,
        };
        let Some((qid, score)) = hits.into_iter().next() else {
            report.rejections.push(reject(RejectReason::NoResult, None));
            continue;
        };
        let Some(q) = by_id.get(qid.as_str()) else {
            report.rejections.push(reject(RejectReason::NoResult, Some(&qid)));
            continue;
        };
        // Checked before the quarter rule, which alone implies a gap of at least 92 days.
        if gap_days(&db.timestamp, &q.timestamp) < cfg.min_gap_days {
            report.rejections.push(reject(RejectReason::TemporalGap, Some(&qid)));
            continue;
        }
        if q.quarter != db.quarter.opposite() {
            report
                .rejections
                .push(reject(RejectReason::QuarterConstraint, Some(&qid)));
            continue;
        }
        if cfg.unique_queries && !used.insert(qid.clone()) {
            report.rejections.push(reject(RejectReason::DuplicateQuery, Some(&qid)));
            continue;
        }
        let (early, late) = if db.timestamp <= q.timestamp {
            (db, *q)
        } else {
            (*q, db)
        };
        report.pairs.push(PairRecord {
            id: format!("{}-{}", db.id, q.id),
            t0_path: early.path.clone(),
            t1_path: late.path.clone(),
            t0_time: early.timestamp,
            t1_time: late.timestamp,
            database_id: Some(db.id.clone()),
            query_id: Some(q.id.clone()),
            retrieval_score: Some(score),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitSizes {
    Fractions { train: f64, val: f64, test: f64 },
    Counts { train: usize, val: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitSpec {
    pub fn counts(train: usize, val: usize, test: usize, seed: u64) -> Self {
        Self {
            sizes: SplitSizes::Counts { train, val, test },
            seed,
        }
    }

    pub fn fractions(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            sizes: SplitSizes::Fractions { train, val, test },
            seed,
        }
    }

    /// Split sizes for a pool of `n`. Counts must sum to `n`; fractions are
    /// apportioned by largest remainder.
    pub fn resolve(&self, n: usize) -> Result<[usize; 3]> {
        match self.sizes {
            SplitSizes::Counts { train, val, test } => {
                let total = train + val + test;
                if total != n {
                    return Err(ScdError::InvalidConfig(format!(
                        "split counts {train}+{val}+{test} = {total} do not partition {n} pairs"
                    )));
                }
                Ok([train, val, test])
            }
            SplitSizes::Fractions { train, val, test } => {
                let f = [train, val, test];
                if f.iter().any(|v| !(0.0..=1.0).contains(v)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(ScdError::InvalidConfig(format!(
                        "split fractions {train}/{val}/{test} must be in [0, 1] and sum to 1"
                    )));
                }
                let exact: Vec<f64> = f.iter().map(|v| v * n as f64).collect();
                let mut out = [0usize; 3];
                for (o, e) in out.iter_mut().zip(&exact) {
                    *o = e.floor() as usize;
                }
                let mut order = [0usize, 1, 2];
                order.sort_by(|&a, &b| {
                    let ra = exact[a] - exact[a].floor();
                    let rb = exact[b] - exact[b].floor();
                    rb.total_cmp(&ra).then(a.cmp(&b))
                });
                let short = n - out.iter().sum::<usize>();
                for &i in order.iter().take(short) {
                    out[i] += 1;
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn split_of(&self, id: &str) -> Option<&'static str> {
        let has = |v: &Vec<String>| v.binary_search_by(|x| x.as_str().cmp(id)).is_ok();
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }

    /// Write `train.txt`, `val.txt` and `test.txt` with one id per line.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mut body = ids.join("\n");
            if !ids.is_empty() {
                body.push('\n');
            }
            fsutil::write_atomic(&dir.join(format!("{name}.txt")), body.as_bytes())?;
        }
        Ok(())
    }
}

/// Sort, seeded shuffle, partition. Each split is returned sorted.
pub fn split(ids: &[String], spec: &SplitSpec) -> Result<Splits> {
    let mut pool: Vec<String> = ids.to_vec();
    pool.sort();
    if pool.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScdError::InvalidConfig("duplicate pair ids".into()));
    }
    let [n_train, n_val, _] = spec.resolve(pool.len())?;
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut test = pool.split_off(n_train + n_val);
    let mut val = pool.split_off(n_train);
    let mut train = pool;
    train.sort();
    val.sort();
    test.sort();
    Ok(Splits { train, val, test })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub object_change: usize,
    pub appearance_change: usize,
    pub not_in_view: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub pool: usize,
    pub accepted: usize,
    pub discarded: usize,
    pub pending: usize,
    /// Accepted pairs containing at least one instance of each class.
    pub categories: CategoryCounts,
}

pub fn curation_stats(annotations: &[PseudoAnnotation]) -> CurationStats {
    let mut s = CurationStats {
        pool: annotations.len(),
        ..CurationStats::default()
    };
    for a in annotations {
        match a.status {
            ReviewStatus::PendingReview => s.pending += 1,
            ReviewStatus::Discarded => s.discarded += 1,
            ReviewStatus::Accepted => {
                s.accepted += 1;
                let has = |c: ChangeClass| a.instances.iter().any(|i| i.class == c);
                s.categories.object_change += has(ChangeClass::ObjectChange) as usize;
                s.categories.appearance_change += has(ChangeClass::AppearanceChange) as usize;
                s.categories.not_in_view += has(ChangeClass::NotInView) as usize;
            }
        }
    }
    s
}

impl CurationStats {
    pub fn to_table(&self) -> String {
        let rows = [
            ("pool", self.pool),
            ("accepted", self.accepted),
            ("discarded", self.discarded),
            ("pending", self.pending),
            ("object_change pairs", self.categories.object_change),
            ("appearance_change pairs", self.categories.appearance_change),
            ("not_in_view pairs", self.categories.not_in_view),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>7}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{CandidateKind, ClassifiedInstance};
    use crate::caption::CaptionReport;
    use crate::types::{Bitmap, ChangeMask, CommonViewMask, MaskInstance, MaskSource};

    fn at(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        chrono::NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(12, 0, 0)
            .unwrap()
            .and_utc()
    }

    fn rec(id: &str, ts: DateTime<Utc>) -> ImageRecord {
        ImageRecord::new(id, format!("{id}.png"), GeoPoint { lat: 40.7, lon: -74.0 }, ts)
    }

    #[test]
    fn quarters() {
        assert_eq!(Quarter::of(&at(2023, 3, 31)), Quarter::Q1);
        assert_eq!(Quarter::of(&at(2023, 4, 1)), Quarter::Q2);
        assert_eq!(Quarter::of(&at(2023, 12, 1)), Quarter::Q4);
        assert_eq!(Quarter::Q2.opposite(), Quarter::Q4);
        assert_eq!(Quarter::Q3.opposite(), Quarter::Q1);
    }

    #[test]
    fn record_quarter_checked_on_load() {
        let ok = r#"{"id":"a","path":"a.png","gps":{"lat":0,"lon":0},"timestamp":"2023-02-01T00:00:00Z"}"#;
        let r: ImageRecord = serde_json::from_str(ok).unwrap();
        assert_eq!(r.quarter, Quarter::Q1);
        let bad =
            r#"{"id":"a","path":"a.png","gps":{"lat":0,"lon":0},"timestamp":"2023-02-01T00:00:00Z","quarter":"Q3"}"#;
        assert!(serde_json::from_str::<ImageRecord>(bad).is_err());
    }

    #[test]
    fn scripted_pairs_and_rejections() {
        let db = vec![
            rec("d1", at(2023, 2, 1)),
            rec("d2", at(2023, 2, 1)),
            rec("d3", at(2023, 8, 1)),
            rec("d4", at(2023, 5, 1)),
        ];
        let qs = vec![
            rec("q1", at(2023, 8, 15)),
            rec("q2", at(2023, 5, 10)),
            rec("q3", at(2023, 9, 20)),
            rec("q4", at(2023, 3, 30)),
        ];
        let r = ScriptedRetriever::new();
        r.script("d1", "q1", 0.9);
        r.script("d2", "q2", 0.8); // Q1 with Q2
        r.script("d3", "q4", 0.7); // Q3 with Q1 but 124 days
                                   // d4 unscripted
        let out = build_pairs(&db, &qs, &r, &PairingConfig::default()).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].id, "d1-q1");
        assert_eq!(out.pairs[0].t0_time, at(2023, 2, 1));
        assert_eq!(out.pairs[1].t0_path, PathBuf::from("q4.png"), "earlier capture is T0");
        let reasons: Vec<RejectReason> = out.rejections.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, [RejectReason::QuarterConstraint, RejectReason::NoResult]);
    }

    #[test]
    fn gap_boundary() {
        let r = ScriptedRetriever::new();
        r.script("d", "q", 1.0);
        let run = |d: DateTime<Utc>, q: DateTime<Utc>, cfg: PairingConfig| {
            build_pairs(&[rec("d", d)], &[rec("q", q)], &r, &cfg).unwrap()
        };
        // Two months apart, same quarter: the gap is reported.
        let out = run(at(2023, 1, 5), at(2023, 3, 5), PairingConfig::default());
        assert_eq!(out.rejections[0].reason, RejectReason::TemporalGap);
        // Q2 end to Q4 start is 93 days.
        assert_eq!(gap_days(&at(2023, 6, 30), &at(2023, 10, 1)), 93);
        assert_eq!(
            run(at(2023, 6, 30), at(2023, 10, 1), PairingConfig::default())
                .pairs
                .len(),
            1
        );
        let strict = PairingConfig {
            min_gap_days: 94,
            ..PairingConfig::default()
        };
        let out = run(at(2023, 6, 30), at(2023, 10, 1), strict);
        assert_eq!(out.rejections[0].reason, RejectReason::TemporalGap);
        // A Q1/Q2 pair a year apart fails only the quarter rule.
        let out = run(at(2023, 2, 1), at(2024, 5, 1), PairingConfig::default());
        assert_eq!(out.rejections[0].reason, RejectReason::QuarterConstraint);
    }

    #[test]
    fn duplicates_kept_unless_unique() {
        let db = vec![rec("a", at(2023, 1, 10)), rec("b", at(2023, 1, 11))];
        let qs = vec![rec("q", at(2023, 7, 20))];
        let r = ScriptedRetriever::new();
        r.script("a", "q", 0.9);
        r.script("b", "q", 0.8);
        assert_eq!(
            build_pairs(&db, &qs, &r, &PairingConfig::default())
                .unwrap()
                .pairs
                .len(),
            2
        );
        let cfg = PairingConfig {
            unique_queries: true,
            ..PairingConfig::default()
        };
        let out = build_pairs(&db, &qs, &r, &cfg).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.rejections[0].reason, RejectReason::DuplicateQuery);
    }

    #[test]
    fn retriever_errors() {
        let db = vec![rec("a", at(2023, 1, 10))];
        let qs = vec![rec("q", at(2023, 7, 20))];
        let r = ScriptedRetriever::new();
        r.fail_for("a");
        assert!(matches!(
            build_pairs(&db, &qs, &r, &PairingConfig::default()),
            Err(ScdError::RetrieverUnavailable(_))
        ));
        assert!(build_pairs(&db, &[], &r, &PairingConfig::default()).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:05}")).collect()
    }

    #[test]
    fn fraction_split_sizes() {
        let s = split(&ids(10), &SplitSpec::fractions(0.6, 0.2, 0.2, 1)).unwrap();
        assert_eq!(s.sizes(), [6, 2, 2]);
        assert_eq!(SplitSpec::fractions(0.5, 0.25, 0.25, 0).resolve(7).unwrap(), [3, 2, 2]);
        assert!(SplitSpec::fractions(0.5, 0.5, 0.5, 0).resolve(7).is_err());
    }

    #[test]
    fn split_partitions_and_is_seeded() {
        let pool = ids(50);
        let spec = SplitSpec::counts(30, 10, 10, 42);
        let a = split(&pool, &spec).unwrap();
        let mut shuffled = pool.clone();
        shuffled.reverse();
        assert_eq!(split(&shuffled, &spec).unwrap(), a, "input order does not matter");
        let mut all: Vec<String> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
        all.sort();
        assert_eq!(all, pool);
        assert_ne!(split(&pool, &SplitSpec::counts(30, 10, 10, 43)).unwrap(), a);
        assert_eq!(a.split_of(&a.val[0]), Some("val"));
    }

    #[test]
    fn split_count_errors() {
        assert!(split(&ids(10), &SplitSpec::counts(8, 2, 2, 0)).is_err());
        assert!(split(&ids(10), &SplitSpec::counts(5, 2, 2, 0)).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(split(&dup, &SplitSpec::counts(1, 1, 0, 0)).is_err());
    }

    fn annotation(classes: &[ChangeClass], status: ReviewStatus) -> PseudoAnnotation {
        let instances: Vec<ClassifiedInstance> = classes
            .iter()
            .enumerate()
            .map(|(k, &class)| ClassifiedInstance {
                instance: MaskInstance::new(format!("i{k}"), Bitmap::rect(4, 4, k, 0, 1, 1), MaskSource::Tracker),
                kind: CandidateKind::Object,
                class,
            })
            .collect();
        PseudoAnnotation {
            pair_id: "p".into(),
            mask: ChangeMask::zeros(4, 4, 4).unwrap(),
            instances,
            common_view: CommonViewMask::new(Bitmap::full(4, 4)),
            caption: CaptionReport::default(),
            status,
        }
    }

    #[test]
    fn stats_counting() {
        assert_eq!(curation_stats(&[]), CurationStats::default());
        use ChangeClass::*;
        let a = [
            annotation(&[ObjectChange], ReviewStatus::Accepted),
            annotation(&[ObjectChange, AppearanceChange], ReviewStatus::Accepted),
            annotation(&[NotInView], ReviewStatus::Accepted),
            annotation(&[ObjectChange], ReviewStatus::Discarded),
            annotation(&[], ReviewStatus::PendingReview),
        ];
        let s = curation_stats(&a);
        assert_eq!(
            s.categories,
            CategoryCounts {
                object_change: 2,
                appearance_change: 1,
                not_in_view: 1
            }
        );
        assert_eq!((s.pool, s.accepted, s.discarded, s.pending), (5, 3, 1, 1));
        assert!(s.to_table().contains("discarded"));
    }
}
