use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};

use super::*;
use crate::curation::SplitSpec;
use crate::synthetic::{pseudo_annotation, Rect};
use crate::types::ChangeClass::{self, *};

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

fn r(x: usize, y: usize, w: usize, h: usize) -> Rect {
    Rect { x, y, w, h }
}

fn fixture(n: usize) -> Vec<crate::annotation::PseudoAnnotation> {
    (0..n)
        .map(|i| {
            let inst: Vec<(ChangeClass, Rect)> = vec![
                (ObjectChange, r(0, 0, 3, 3)),
                (AppearanceChange, r(2, 2, 4, 4)),
                (NotInView, r(5, 5, 3, 3)),
            ];
            pseudo_annotation(&format!("p{i}"), 8, &inst).unwrap()
        })
        .collect()
}

fn store(dir: &std::path::Path, n: usize) -> (ReviewStore, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(t0()));
    let s = ReviewStore::from_annotations(
        fixture(n),
        &dir.join(DECISION_LOG),
        ReviewConfig::default(),
        clock.clone(),
    )
    .unwrap();
    (s, clock)
}

fn accept(id: &str, who: &str) -> ReviewDecision {
    ReviewDecision::new(id, ReviewAction::Accept, who, t0())
}

#[test]
fn decision_validation() {
    let mut d = ReviewDecision::new("p0", ReviewAction::RemoveInstance, "ann", t0());
    assert!(d.validate().is_err());
    d.instance_id = Some("x".into());
    assert!(d.validate().is_ok());
    let mut a = accept("p0", "ann");
    a.instance_id = Some("x".into());
    assert!(a.validate().is_err());
    assert!(accept("p0", " ").validate().is_err());
}

#[test]
fn sessions_get_distinct_pairs_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 3);
    assert_eq!(s.next_pending("a").unwrap().unwrap().annotation.pair_id, "p0");
    assert_eq!(s.next_pending("b").unwrap().unwrap().annotation.pair_id, "p1");
    // Asking again renews the same lease.
    assert_eq!(s.next_pending("a").unwrap().unwrap().annotation.pair_id, "p0");
    assert_eq!(s.progress().leased, 2);
}

#[test]
fn all_reviewed_returns_none_with_progress() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 3);
    s.record(&accept("p0", "a")).unwrap();
    s.record(&accept("p1", "a")).unwrap();
    s.record(&ReviewDecision::new("p2", ReviewAction::Discard, "a", t0()))
        .unwrap();
    assert!(s.next_pending("a").unwrap().is_none());
    let p = s.progress();
    assert_eq!((p.total, p.pending, p.accepted, p.discarded, p.leased), (3, 0, 2, 1, 0));
}

#[test]
fn lease_expiry_returns_pair_to_queue() {
    let dir = tempfile::tempdir().unwrap();
    let (s, clock) = store(dir.path(), 1);
    assert!(s.next_pending("a").unwrap().is_some());
    assert!(s.next_pending("b").unwrap().is_none());
    assert!(matches!(s.record(&accept("p0", "b")), Err(ScdError::Conflict(_))));
    clock.advance(Duration::minutes(14));
    assert!(s.next_pending("b").unwrap().is_none());
    clock.advance(Duration::minutes(2));
    let c = s.next_pending("b").unwrap().unwrap();
    assert_eq!(c.annotation.pair_id, "p0");
    assert_eq!(c.expires, t0() + Duration::minutes(16 + 15));
    assert!(matches!(s.renew("p0", "a"), Err(ScdError::Conflict(_))));
}

#[test]
fn record_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 1);
    assert!(matches!(s.record(&accept("nope", "a")), Err(ScdError::NotFound(_))));
    assert!(matches!(
        s.record(&ReviewDecision::remove("p0", "ghost", "a", t0())),
        Err(ScdError::NotFound(_))
    ));
    s.record(&accept("p0", "a")).unwrap();
    assert!(matches!(s.record(&accept("p0", "a")), Err(ScdError::Conflict(_))));
    // Only the successful decision was logged.
    let log = std::fs::read_to_string(s.log_path()).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn remove_then_accept_drops_class_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 1);
    let after = s.record(&ReviewDecision::remove("p0", "p0-i0", "a", t0())).unwrap();
    assert_eq!(after.status, crate::annotation::ReviewStatus::PendingReview);
    let done = s.record(&accept("p0", "a")).unwrap();
    // Brute force: no class-1 pixel remains, other instances keep theirs.
    let mut ones = 0;
    for y in 0..8 {
        for x in 0..8 {
            let l = done.mask.get(x, y);
            ones += (l == 1) as usize;
            let in_app = (2..6).contains(&x) && (2..6).contains(&y);
            let in_niv = (5..8).contains(&x) && (5..8).contains(&y);
            let want = if in_app {
                2
            } else if in_niv {
                3
            } else {
                0
            };
            assert_eq!(l, want, "({x},{y})");
        }
    }
    assert_eq!(ones, 0);
}

#[test]
fn replay_reproduces_state() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 4);
    s.record(&ReviewDecision::remove("p0", "p0-i1", "a", t0())).unwrap();
    s.record(&accept("p0", "a")).unwrap();
    s.record(&ReviewDecision::new("p2", ReviewAction::Discard, "b", t0()))
        .unwrap();
    s.record(&ReviewDecision::remove("p3", "p3-i2", "b", t0())).unwrap();
    let before = s.state();
    drop(s);
    let (reopened, _) = store(dir.path(), 4);
    assert_eq!(reopened.state(), before);
    assert_eq!(before.decision_count(), 4);
    assert_eq!(before.removed("p0"), ["p0-i1".to_string()]);
}

#[test]
fn torn_final_record_is_dropped_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 2);
    s.record(&accept("p0", "a")).unwrap();
    let path = s.log_path().to_path_buf();
    drop(s);
    let mut bytes = std::fs::read(&path).unwrap();
    let clean = bytes.len();
    bytes.extend_from_slice(b"{\"pair_id\":\"p1\",\"act");
    std::fs::write(&path, &bytes).unwrap();
    let (s, _) = store(dir.path(), 2);
    assert_eq!(s.progress().accepted, 1);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, clean);
    s.record(&accept("p1", "a")).unwrap();
    drop(s);
    let (s, _) = store(dir.path(), 2);
    assert_eq!(s.progress().accepted, 2);
}

#[test]
fn concurrent_sessions_never_share_a_lease() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 25);
    let got: Vec<Vec<String>> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..10)
            .map(|k| {
                let s = &s;
                sc.spawn(move || {
                    let who = format!("s{k}");
                    let mut mine = Vec::new();
                    while let Some(c) = s.next_pending(&who).unwrap() {
                        mine.push(c.annotation.pair_id.clone());
                        s.record(&accept(&c.annotation.pair_id, &who)).unwrap();
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut all: Vec<String> = got.concat();
    all.sort();
    let n = all.len();
    all.dedup();
    assert_eq!(n, 25);
    assert_eq!(all.len(), 25);
}

#[test]
fn export_accepted_only_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 3);
    s.record(&ReviewDecision::remove("p0", "p0-i0", "a", t0())).unwrap();
    s.record(&accept("p0", "a")).unwrap();
    s.record(&accept("p1", "a")).unwrap();
    let spec = SplitSpec::counts(1, 0, 1, 7);
    assert!(matches!(
        export_dataset(&s, &dir.path().join("x"), &spec, false),
        Err(ScdError::Conflict(_))
    ));
    s.record(&ReviewDecision::new("p2", ReviewAction::Discard, "a", t0()))
        .unwrap();
    let out = dir.path().join("export");
    let m = export_dataset(&s, &out, &spec, false).unwrap();
    assert_eq!(m.pairs.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["p0", "p1"]);
    assert_eq!(m.stats.discarded, 1);
    assert_eq!(m.pairs[0].removed_instances, ["p0-i0".to_string()]);
    let rebuilt = s.get("p0").unwrap().without_instances(&[]).unwrap();
    assert_eq!(
        std::fs::read(out.join("masks/p0.png")).unwrap(),
        crate::types::io::change_mask_png_bytes(&rebuilt.mask).unwrap()
    );
    let first = std::fs::read(out.join(EXPORT_MANIFEST)).unwrap();
    export_dataset(&s, &out, &spec, false).unwrap();
    assert_eq!(std::fs::read(out.join(EXPORT_MANIFEST)).unwrap(), first);
    assert!(!out.join("masks/p2.png").exists());
}

#[test]
fn partial_export_and_foreign_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(dir.path(), 3);
    s.record(&accept("p1", "a")).unwrap();
    let m = export_dataset(&s, &dir.path().join("e"), &SplitSpec::counts(1, 0, 0, 1), true).unwrap();
    assert_eq!(m.pairs.len(), 1);
    let foreign = dir.path().join("foreign");
    std::fs::create_dir_all(&foreign).unwrap();
    std::fs::write(foreign.join("keep.txt"), b"x").unwrap();
    assert!(export_dataset(&s, &foreign, &SplitSpec::counts(1, 0, 0, 1), true).is_err());
    assert!(foreign.join("keep.txt").exists());
}
