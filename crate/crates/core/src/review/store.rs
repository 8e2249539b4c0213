use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ReviewDecision, ReviewState};
use crate::annotation::{PseudoAnnotation, ReviewStatus, PSEUDO_FILE};
use crate::error::{Result, ScdError};
use crate::fsutil;

pub const DECISION_LOG: &str = "decisions.jsonl";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Test clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: chrono::Duration) {
        *self.0.lock().expect("clock lock") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewConfig {
    pub lease_timeout_secs: u64,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            lease_timeout_secs: 15 * 60,
        }
    }
}

impl ReviewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lease_timeout_secs == 0 {
            return Err(ScdError::InvalidConfig("lease_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    fn lease(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.lease_timeout_secs as i64)
    }
}

#[derive(Debug, Clone)]
struct Lease {
    session: String,
    expires: DateTime<Utc>,
}

/// A pair handed to one review session.
#[derive(Debug, Clone)]
pub struct Checkout {
    pub annotation: PseudoAnnotation,
    pub session: String,
    pub expires: DateTime<Utc>,
    /// Annotation run directory holding t0.png and t1.png, if known.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub discarded: usize,
    pub leased: usize,
}

struct Inner {
    state: ReviewState,
    leases: HashMap<String, Lease>,
    log: File,
}

/// Review store. All mutations go through one mutex, so decisions reach the
/// log in a single total order; leases live in memory only.
pub struct ReviewStore {
    inner: Mutex<Inner>,
    run_dirs: BTreeMap<String, PathBuf>,
    log_path: PathBuf,
    config: ReviewConfig,
    clock: Arc<dyn Clock>,
}

fn read_log(path: &Path) -> Result<Vec<ReviewDecision>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ScdError::io(format!("read {}", path.display()), e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < text.len() {
        log::warn!(
            "{}: dropping {} bytes of an unterminated final record",
            path.display(),
            text.len() - complete
        );
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| ScdError::io(format!("open {}", path.display()), e))?;
        f.set_len(complete as u64)
            .and_then(|_| f.sync_all())
            .map_err(|e| ScdError::io(format!("truncate {}", path.display()), e))?;
    }
    text[..complete]
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| ScdError::json(format!("{} line {}", path.display(), n + 1), e))
        })
        .collect()
}

/// Run directories under `runs_dir` that hold a finished pseudo-annotation.
pub(crate) fn scan_runs(runs_dir: &Path) -> Result<Vec<(PseudoAnnotation, PathBuf)>> {
    let entries = std::fs::read_dir(runs_dir).map_err(|e| ScdError::io(format!("list {}", runs_dir.display()), e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(PSEUDO_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| Ok((fsutil::read_json::<PseudoAnnotation>(&d.join(PSEUDO_FILE))?, d)))
        .collect()
}

impl ReviewStore {
    /// Loads every `06_pseudo.json` under `runs_dir` and replays the log at
    /// `log_path`, creating it if absent.
    pub fn open(runs_dir: &Path, log_path: &Path, config: ReviewConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let runs = scan_runs(runs_dir)?;
        let mut run_dirs = BTreeMap::new();
        let mut annotations = Vec::with_capacity(runs.len());
        for (a, dir) in runs {
            run_dirs.insert(a.pair_id.clone(), dir);
            annotations.push(a);
        }
        Self::build(annotations, run_dirs, log_path, config, clock)
    }

    /// Store over in-memory annotations without image directories.
    pub fn from_annotations(
        annotations: Vec<PseudoAnnotation>,
        log_path: &Path,
        config: ReviewConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        Self::build(annotations, BTreeMap::new(), log_path, config, clock)
    }

    fn build(
        annotations: Vec<PseudoAnnotation>,
        run_dirs: BTreeMap<String, PathBuf>,
        log_path: &Path,
        config: ReviewConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        let decisions = read_log(log_path)?;
        let state = ReviewState::replay(annotations, &decisions)?;
        if let Some(dir) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fsutil::create_dir_all(dir)?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|e| ScdError::io(format!("open {}", log_path.display()), e))?;
        Ok(Self {
            inner: Mutex::new(Inner {
                state,
                leases: HashMap::new(),
                log,
            }),
            run_dirs,
            log_path: log_path.to_path_buf(),
            config,
            clock,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn config(&self) -> ReviewConfig {
        self.config
    }

    pub fn run_dir(&self, pair_id: &str) -> Option<&Path> {
        self.run_dirs.get(pair_id).map(PathBuf::as_path)
    }

    fn checkout(&self, inner: &mut Inner, pair_id: &str, session: &str, now: DateTime<Utc>) -> Checkout {
        let expires = now + self.config.lease();
        inner.leases.insert(
            pair_id.to_string(),
            Lease {
                session: session.to_string(),
                expires,
            },
        );
        Checkout {
            annotation: inner.state.get(pair_id).expect("known pair").clone(),
            session: session.to_string(),
            expires,
            run_dir: self.run_dirs.get(pair_id).cloned(),
        }
    }

    /// Oldest pending pair not leased by another session. A session that
    /// already holds a lease gets the same pair back with the lease renewed.
    pub fn next_pending(&self, session: &str) -> Result<Option<Checkout>> {
        if session.trim().is_empty() {
            return Err(ScdError::InvalidConfig("empty session name".into()));
        }
        let now = self.clock.now();
        let mut inner = self.lock();
        inner.leases.retain(|_, l| l.expires > now);
        let held = inner
            .leases
            .iter()
            .filter(|(_, l)| l.session == session)
            .map(|(id, _)| id.clone())
            .min();
        let pick = held.or_else(|| {
            inner
                .state
                .annotations()
                .find(|a| a.status == ReviewStatus::PendingReview && !inner.leases.contains_key(&a.pair_id))
                .map(|a| a.pair_id.clone())
        });
        Ok(pick.map(|id| self.checkout(&mut inner, &id, session, now)))
    }

    /// Extends or takes the lease on one pending pair.
    pub fn renew(&self, pair_id: &str, session: &str) -> Result<Checkout> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let a = inner
            .state
            .get(pair_id)
            .ok_or_else(|| ScdError::NotFound(format!("pair {pair_id}")))?;
        if a.status != ReviewStatus::PendingReview {
            return Err(ScdError::Conflict(format!("pair {pair_id} is already {:?}", a.status)));
        }
        if let Some(l) = inner.leases.get(pair_id) {
            if l.expires > now && l.session != session {
                return Err(ScdError::Conflict(format!("pair {pair_id} is leased by {}", l.session)));
            }
        }
        Ok(self.checkout(&mut inner, pair_id, session, now))
    }

    /// Validates, appends to the log, then applies. A pair leased by another
    /// live session is a conflict.
    pub fn record(&self, decision: &ReviewDecision) -> Result<PseudoAnnotation> {
        let now = self.clock.now();
        let mut inner = self.lock();
        if let Some(l) = inner.leases.get(&decision.pair_id) {
            if l.expires > now && l.session != decision.reviewer {
                return Err(ScdError::Conflict(format!(
                    "pair {} is leased by {}",
                    decision.pair_id, l.session
                )));
            }
        }
        let next = inner.state.preview(decision)?;
        let mut line = serde_json::to_vec(decision).map_err(|e| ScdError::json("decision", e))?;
        line.push(b'\n');
        inner
            .log
            .write_all(&line)
            .and_then(|_| inner.log.sync_data())
            .map_err(|e| ScdError::io(format!("append {}", self.log_path.display()), e))?;
        let finalized = next.status != ReviewStatus::PendingReview;
        let out = inner.state.commit(decision, next).clone();
        if finalized {
            inner.leases.remove(&decision.pair_id);
        }
        Ok(out)
    }

    pub fn get(&self, pair_id: &str) -> Result<PseudoAnnotation> {
        self.lock()
            .state
            .get(pair_id)
            .cloned()
            .ok_or_else(|| ScdError::NotFound(format!("pair {pair_id}")))
    }

    pub fn progress(&self) -> Progress {
        let now = self.clock.now();
        let inner = self.lock();
        let mut p = Progress {
            leased: inner.leases.values().filter(|l| l.expires > now).count(),
            ..Progress::default()
        };
        for a in inner.state.annotations() {
            p.total += 1;
            match a.status {
                ReviewStatus::PendingReview => p.pending += 1,
                ReviewStatus::Accepted => p.accepted += 1,
                ReviewStatus::Discarded => p.discarded += 1,
            }
        }
        p
    }

    /// Snapshot of the current state.
    pub fn state(&self) -> ReviewState {
        self.lock().state.clone()
    }

    pub fn annotations(&self) -> Vec<PseudoAnnotation> {
        self.lock().state.annotations().cloned().collect()
    }
}
