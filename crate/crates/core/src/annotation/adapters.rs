//! Adapter contracts for the foundation models used by the annotation
//! pipeline, and scripted replay fakes keyed by image content.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use image::RgbImage;
use sha2::{Digest, Sha256};

use crate::error::{Result, ScdError};
use crate::types::Bitmap;

/// Hex SHA-256 over the image dimensions and raw RGB bytes.
pub fn image_digest(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

/// Open-vocabulary segmenter: all instances of `phrase` in `image`, as
/// binary masks at the image resolution.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &RgbImage, phrase: &str) -> Result<Vec<Bitmap>>;
}

/// Class-agnostic video tracker: automatic proposals on T1 that, prompted
/// into T0, are judged absent there. Masks are in the T1 frame.
pub trait Tracker: Send + Sync {
    fn inconsistent(&self, t0: &RgbImage, t1: &RgbImage) -> Result<Vec<Bitmap>>;
}

/// Dense matcher: T1-frame mask of pixels with a valid correspondence in T0.
pub trait DenseMatcher: Send + Sync {
    fn correspondence(&self, t0: &RgbImage, t1: &RgbImage) -> Result<Bitmap>;
}

#[derive(Default)]
struct FakeControl {
    calls: AtomicUsize,
    failing: Mutex<Vec<String>>,
    delay: Mutex<Option<Duration>>,
}

impl FakeControl {
    fn enter(&self, t1: &str, what: &str) -> std::result::Result<(), String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = *self.delay.lock().expect("lock") {
            std::thread::sleep(d);
        }
        if self.failing.lock().expect("lock").iter().any(|f| f == t1) {
            return Err(format!("scripted {what} failure"));
        }
        Ok(())
    }
}

macro_rules! fake_controls {
    ($t:ty) => {
        impl $t {
            pub fn call_count(&self) -> usize {
                self.control.calls.load(Ordering::SeqCst)
            }

            /// Fail every call whose T1 image equals `t1`.
            pub fn fail_for(&self, t1: &RgbImage) {
                self.control.failing.lock().expect("lock").push(image_digest(t1));
            }

            /// Sleep this long inside every call.
            pub fn set_delay(&self, delay: Duration) {
                *self.control.delay.lock().expect("lock") = Some(delay);
            }
        }
    };
}

/// Replay segmenter keyed by (T1 digest, phrase). Unscripted queries return
/// no instances.
#[derive(Default)]
pub struct ScriptedSegmenter {
    scripts: Mutex<HashMap<(String, String), Vec<Bitmap>>>,
    control: FakeControl,
}

impl ScriptedSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, image: &RgbImage, phrase: &str, masks: Vec<Bitmap>) {
        self.scripts
            .lock()
            .expect("lock")
            .insert((image_digest(image), phrase.to_string()), masks);
    }
}

fake_controls!(ScriptedSegmenter);

impl Segmenter for ScriptedSegmenter {
    fn segment(&self, image: &RgbImage, phrase: &str) -> Result<Vec<Bitmap>> {
        let key = image_digest(image);
        self.control
            .enter(&key, "segmenter")
            .map_err(ScdError::SegmenterUnavailable)?;
        Ok(self
            .scripts
            .lock()
            .expect("lock")
            .get(&(key, phrase.to_string()))
            .cloned()
            .unwrap_or_default())
    }
}

/// Replay tracker keyed by (T0 digest, T1 digest). Identical images and
/// unscripted pairs yield no inconsistent proposals.
#[derive(Default)]
pub struct ScriptedTracker {
    scripts: Mutex<HashMap<(String, String), Vec<Bitmap>>>,
    control: FakeControl,
}

impl ScriptedTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, t0: &RgbImage, t1: &RgbImage, masks: Vec<Bitmap>) {
        self.scripts
            .lock()
            .expect("lock")
            .insert((image_digest(t0), image_digest(t1)), masks);
    }
}

fake_controls!(ScriptedTracker);

impl Tracker for ScriptedTracker {
    fn inconsistent(&self, t0: &RgbImage, t1: &RgbImage) -> Result<Vec<Bitmap>> {
        let (k0, k1) = (image_digest(t0), image_digest(t1));
        self.control
            .enter(&k1, "tracker")
            .map_err(ScdError::TrackerUnavailable)?;
        if k0 == k1 {
            return Ok(Vec::new());
        }
        Ok(self
            .scripts
            .lock()
            .expect("lock")
            .get(&(k0, k1))
            .cloned()
            .unwrap_or_default())
    }
}

/// Replay matcher keyed by (T0 digest, T1 digest). Unscripted pairs get a
/// full-frame correspondence mask.
#[derive(Default)]
pub struct ScriptedMatcher {
    scripts: Mutex<HashMap<(String, String), Bitmap>>,
    control: FakeControl,
}

impl ScriptedMatcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, t0: &RgbImage, t1: &RgbImage, mask: Bitmap) {
        self.scripts
            .lock()
            .expect("lock")
            .insert((image_digest(t0), image_digest(t1)), mask);
    }
}

fake_controls!(ScriptedMatcher);

impl DenseMatcher for ScriptedMatcher {
    fn correspondence(&self, t0: &RgbImage, t1: &RgbImage) -> Result<Bitmap> {
        let (k0, k1) = (image_digest(t0), image_digest(t1));
        self.control
            .enter(&k1, "matcher")
            .map_err(ScdError::MatcherUnavailable)?;
        Ok(self
            .scripts
            .lock()
            .expect("lock")
            .get(&(k0, k1))
            .cloned()
            .unwrap_or_else(|| Bitmap::full(t1.width() as usize, t1.height() as usize)))
    }
}
