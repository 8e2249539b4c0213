use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{default_class_weights, normalize_weights, weighted_cross_entropy};
use super::{argmax_masks, ScdModel, MODEL_CONFIG_KEY};
use crate::enhancer::TextEncoder;
use crate::error::{Result, ScdError};
use crate::evaluation::{evaluate, Averaging};
use crate::nn::{ensure_finite, Adam, AdamConfig};
use crate::types::{ChangeMask, ImagePair};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const TRACE_FILE: &str = "trace.csv";
const TRAIN_STATE_KEY: &str = "train_state";
const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of total steps spent in linear warm-up.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    /// Accepted for interface parity; CPU training always runs at the model precision.
    pub mixed_precision: bool,
    pub hflip_prob: f64,
    /// Per-class weights; `None` selects the default for the class count.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            warmup_fraction: 0.05,
            batch_size: 4,
            mixed_precision: false,
            hflip_prob: 0.5,
            class_weights: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ScdError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ScdError::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) || !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(ScdError::InvalidConfig(
                "warmup_fraction and hflip_prob must lie in [0, 1]".into(),
            ));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != num_classes {
                return Err(ScdError::InvalidConfig(format!(
                    "{} class weights for {num_classes} classes",
                    w.len()
                )));
            }
            normalize_weights(w)?;
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `base_lr`, then cosine decay to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = if warmup_fraction > 0.0 {
            ((warmup_fraction * total_steps as f64).ceil() as usize).clamp(1, total_steps.max(1))
        } else {
            0
        };
        Self {
            base_lr,
            warmup_steps,
            total_steps,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.base_lr;
        }
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One supervised pair at the model's input resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub image_t0: RgbImage,
    pub image_t1: RgbImage,
    pub phrases: Vec<String>,
    pub target: ChangeMask,
}

impl TrainSample {
    pub fn new(
        id: impl Into<String>,
        image_t0: RgbImage,
        image_t1: RgbImage,
        phrases: Vec<String>,
        target: ChangeMask,
    ) -> Result<Self> {
        let dims = (image_t0.width() as usize, image_t0.height() as usize);
        if image_t1.dimensions() != image_t0.dimensions() || target.dims() != dims {
            return Err(ScdError::Shape(format!(
                "sample images {:?}/{:?} and target {:?} differ",
                image_t0.dimensions(),
                image_t1.dimensions(),
                target.dims()
            )));
        }
        Ok(Self {
            id: id.into(),
            image_t0,
            image_t1,
            phrases,
            target,
        })
    }

    pub fn from_pair(pair: &ImagePair, phrases: Vec<String>, target: ChangeMask) -> Result<Self> {
        Self::new(&pair.id, pair.image_t0.clone(), pair.image_t1.clone(), phrases, target)
    }

    /// Resize images (triangle filter) and target (nearest) to `res x res`.
    pub fn resampled(self, res: u32) -> Result<Self> {
        if self.image_t0.dimensions() == (res, res) {
            return Ok(self);
        }
        let (w, h) = self.target.dims();
        let r = res as usize;
        let labels: Vec<u8> = (0..r * r)
            .map(|i| {
                let (x, y) = (i % r, i / r);
                self.target.get(x * w / r, y * h / r)
            })
            .collect();
        let target = ChangeMask::from_labels(r, r, self.target.num_classes(), labels)?;
        Self::new(
            self.id,
            imageops::resize(&self.image_t0, res, res, FilterType::Triangle),
            imageops::resize(&self.image_t1, res, res, FilterType::Triangle),
            self.phrases,
            target,
        )
    }

    /// Both images and the target mirrored left-right.
    pub fn flipped(&self) -> Self {
        Self {
            id: self.id.clone(),
            image_t0: imageops::flip_horizontal(&self.image_t0),
            image_t1: imageops::flip_horizontal(&self.image_t1),
            phrases: self.phrases.clone(),
            target: self.target.flip_horizontal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_f1: f64,
    pub val_iou: f64,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,lr,loss,val_f1,val_iou\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:.6},{:.6},{:.6}\n",
            r.step, r.lr, r.loss, r.val_f1, r.val_iou
        ));
    }
    crate::fsutil::write_atomic(path, out.as_bytes())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TrainState {
    epochs_done: usize,
    step: usize,
    best_val_f1: Option<f64>,
    best_epoch: Option<usize>,
    class_weights: Vec<f64>,
    trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub steps: usize,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub class_weights: Vec<f64>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

type StepHook<'a> = Box<dyn FnMut(usize, f64) + 'a>;

/// Single-driver training loop over the trainable parameters of a model.
pub struct Trainer<'a> {
    model: &'a ScdModel,
    text_encoder: &'a dyn TextEncoder,
    config: TrainConfig,
    out_dir: PathBuf,
    hook: Option<StepHook<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a ScdModel,
        text_encoder: &'a dyn TextEncoder,
        config: TrainConfig,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            model,
            text_encoder,
            config,
            out_dir: out_dir.into(),
            hook: None,
        }
    }

    /// Called after every optimizer step with `(step, loss)`.
    pub fn with_step_hook(mut self, hook: impl FnMut(usize, f64) + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn schedule(&self, train_len: usize) -> LrSchedule {
        let per_epoch = train_len.div_ceil(self.config.batch_size);
        LrSchedule::new(
            self.config.lr,
            per_epoch * self.config.epochs,
            self.config.warmup_fraction,
        )
    }

    /// Train from scratch or, with `resume`, continue from the last checkpoint
    /// in the output directory.
    pub fn train(&mut self, train: &[TrainSample], val: &[TrainSample], resume: bool) -> Result<TrainOutcome> {
        let spec = self.model.spec().clone();
        let k = spec.num_classes as usize;
        self.config.validate(k)?;
        if train.is_empty() || val.is_empty() {
            return Err(ScdError::InvalidConfig(
                "training needs nonempty train and val splits".into(),
            ));
        }
        let r = spec.input_resolution as usize;
        for s in train.iter().chain(val) {
            if s.target.dims() != (r, r) {
                return Err(ScdError::Shape(format!(
                    "sample {} is {:?}, model input is {r}x{r}",
                    s.id,
                    s.target.dims()
                )));
            }
            if s.target.num_classes() as usize > k && s.target.labels().iter().any(|&l| l as usize >= k) {
                return Err(ScdError::Label {
                    label: *s.target.labels().iter().max().expect("nonempty") as u32,
                    num_classes: k,
                });
            }
        }
        if self.config.mixed_precision {
            log::warn!(
                "mixed precision is not available on CPU; training at {:?}",
                self.model.dtype()
            );
        }
        crate::fsutil::create_dir_all(&self.out_dir)?;
        let best_path = self.out_dir.join(BEST_CHECKPOINT);
        let last_path = self.out_dir.join(LAST_CHECKPOINT);
        let trace_path = self.out_dir.join(TRACE_FILE);

        let mut adam = Adam::new(self.model.store().trainable(), self.config.adam.clone())?;
        let mut state = if resume && last_path.exists() {
            self.restore(&last_path, &mut adam)?
        } else {
            let targets: Vec<&ChangeMask> = train.iter().map(|s| &s.target).collect();
            let weights = match &self.config.class_weights {
                Some(w) => normalize_weights(w)?,
                None => default_class_weights(k, &targets)?,
            };
            TrainState {
                class_weights: weights,
                ..TrainState::default()
            }
        };

        let schedule = self.schedule(train.len());
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in state.epochs_done..self.config.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut losses = Vec::new();
            let mut lr = schedule.at(state.step);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<TrainSample> = chunk
                    .iter()
                    .map(|&i| {
                        if rng.random::<f64>() < self.config.hflip_prob {
                            train[i].flipped()
                        } else {
                            train[i].clone()
                        }
                    })
                    .collect();
                let logits = self.logits(&batch)?;
                let targets: Vec<ChangeMask> = batch.iter().map(|s| s.target.clone()).collect();
                let loss = weighted_cross_entropy(&logits, &targets, &state.class_weights)?;
                let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                if !value.is_finite() {
                    return Err(ScdError::Numerical(format!(
                        "training loss at step {}; last good checkpoint: {}",
                        state.step,
                        if last_path.exists() {
                            last_path.display().to_string()
                        } else {
                            "none".into()
                        }
                    )));
                }
                let grads = loss.backward()?;
                lr = schedule.at(state.step);
                adam.step(&grads, lr)?;
                state.step += 1;
                losses.push(value);
                if let Some(hook) = self.hook.as_mut() {
                    hook(state.step, value);
                }
            }
            let report = self.validate(val)?;
            let row = TraceRow {
                epoch,
                step: state.step,
                lr,
                loss: losses.iter().sum::<f64>() / losses.len() as f64,
                val_f1: report.0,
                val_iou: report.1,
            };
            log::info!(
                "epoch {epoch} step {} loss {:.4} val_f1 {:.4} val_iou {:.4}",
                row.step,
                row.loss,
                row.val_f1,
                row.val_iou
            );
            for (name, var) in self.model.store().trainable() {
                if ensure_finite(var.as_tensor(), &name).is_err() {
                    return Err(ScdError::Numerical(format!(
                        "parameter {name} after epoch {epoch}; last good checkpoint: {}",
                        last_path.display()
                    )));
                }
            }
            state.trace.push(row);
            state.epochs_done = epoch + 1;
            if state.best_val_f1.is_none_or(|b| report.0 > b) {
                state.best_val_f1 = Some(report.0);
                state.best_epoch = Some(epoch);
                self.model.save_with(&best_path, &[], self.metadata(&state)?)?;
            }
            self.save_last(&last_path, &adam, &state)?;
            write_trace_csv(&trace_path, &state.trace)?;
        }
        Ok(TrainOutcome {
            steps: state.step,
            best_val_f1: state.best_val_f1.unwrap_or(0.0),
            best_epoch: state.best_epoch.unwrap_or(0),
            class_weights: state.class_weights.clone(),
            trace: state.trace,
            best_checkpoint: best_path,
            last_checkpoint: last_path,
        })
    }

    fn logits(&self, batch: &[TrainSample]) -> Result<Tensor> {
        let pairs: Vec<(&RgbImage, &RgbImage)> = batch.iter().map(|s| (&s.image_t0, &s.image_t1)).collect();
        let phrases: Vec<Vec<String>> = batch.iter().map(|s| s.phrases.clone()).collect();
        self.model.forward_batch(&pairs, &phrases, self.text_encoder)
    }

    /// `(selection F1, selection IoU)` on the validation split.
    fn validate(&self, val: &[TrainSample]) -> Result<(f64, f64)> {
        let mut pairs = Vec::with_capacity(val.len());
        for chunk in val.chunks(self.config.batch_size) {
            let preds = argmax_masks(&self.logits(chunk)?.detach())?;
            for (p, s) in preds.into_iter().zip(chunk) {
                let gt = ChangeMask::from_labels(p.width(), p.height(), p.num_classes(), s.target.labels().to_vec())?;
                pairs.push((p, gt));
            }
        }
        let report = evaluate(&pairs, Averaging::Pooled)?;
        Ok((report.selection_f1(), report.selection_iou()))
    }

    fn metadata(&self, state: &TrainState) -> Result<HashMap<String, String>> {
        let mut meta = HashMap::new();
        meta.insert(
            TRAIN_STATE_KEY.into(),
            serde_json::to_string(state).map_err(|e| ScdError::json("train state", e))?,
        );
        meta.insert(
            "train_config".into(),
            serde_json::to_string(&self.config).map_err(|e| ScdError::json("train config", e))?,
        );
        Ok(meta)
    }

    fn save_last(&self, path: &Path, adam: &Adam, state: &TrainState) -> Result<()> {
        let (_, moments) = adam.state();
        let mut extra = Vec::with_capacity(moments.len() * 2);
        for (name, m, v) in moments {
            extra.push((format!("{OPTIM_PREFIX}m.{name}"), m));
            extra.push((format!("{OPTIM_PREFIX}v.{name}"), v));
        }
        self.model.save_with(path, &extra, self.metadata(state)?)
    }

    fn restore(&self, path: &Path, adam: &mut Adam) -> Result<TrainState> {
        let bytes = std::fs::read(path).map_err(|e| ScdError::io(format!("read {}", path.display()), e))?;
        let meta = crate::nn::read_archive_metadata(&bytes)?;
        let stored = meta
            .get(MODEL_CONFIG_KEY)
            .ok_or_else(|| ScdError::Checkpoint("checkpoint has no model config".into()))?;
        let stored: super::ModelConfig = serde_json::from_str(stored).map_err(|e| ScdError::json("model config", e))?;
        if &stored != self.model.config() {
            return Err(ScdError::Checkpoint(
                "checkpoint was written for a different model config".into(),
            ));
        }
        let (meta, extras) = self.model.store().load_values_with(&bytes, Some(OPTIM_PREFIX))?;
        let state: TrainState = serde_json::from_str(
            meta.get(TRAIN_STATE_KEY)
                .ok_or_else(|| ScdError::Checkpoint("checkpoint has no train state".into()))?,
        )
        .map_err(|e| ScdError::json("train state", e))?;
        let mut moments = HashMap::new();
        for (name, _) in self.model.store().trainable() {
            let m = extras.get(&format!("{OPTIM_PREFIX}m.{name}"));
            let v = extras.get(&format!("{OPTIM_PREFIX}v.{name}"));
            if let (Some(m), Some(v)) = (m, v) {
                moments.insert(name, (m.clone(), v.clone()));
            }
        }
        adam.restore(state.step as u64, moments)?;
        log::info!("resumed from {} at epoch {}", path.display(), state.epochs_done);
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule::new(1e-4, 200, 0.05);
        assert_eq!(s.warmup_steps, 10);
        assert!(s.at(0) < s.at(10));
        assert_eq!(s.at(10), 1e-4);
        assert!(s.at(5) < s.at(9));
        let mut prev = s.at(10);
        for step in 11..=200 {
            let lr = s.at(step);
            assert!(lr <= prev);
            prev = lr;
        }
        assert!(s.at(200).abs() < 1e-18);
    }

    #[test]
    fn config_checks() {
        let c = TrainConfig {
            class_weights: Some(vec![1.0; 3]),
            ..TrainConfig::default()
        };
        assert!(c.validate(2).is_err());
        assert!(TrainConfig::default().validate(4).is_ok());
        assert_eq!(TrainConfig::default().batch_size, 4);
    }
}
