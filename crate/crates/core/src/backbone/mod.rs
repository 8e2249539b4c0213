//! Scene-change backbone: a frozen shared-weight image encoder, a merge
//! module comparing T0 features with text-enhanced T1 features, and a
//! convolution + upsampling segmentation head.
//!
//! Two encoders ship in-crate: `toy`, a strided conv stack for desk-scale
//! tests (64 px in, 32x4x4 out), and `patch14`, a patch-projection stub with
//! the geometry of a ViT-S/14 adapter (504 px in, 384x36x36 out).

mod loss;
mod train;

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use loss::{default_class_weights, inverse_frequency_weights, normalize_weights, weighted_cross_entropy};
pub use train::{
    write_trace_csv, LrSchedule, TraceRow, TrainConfig, TrainOutcome, TrainSample, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT, TRACE_FILE,
};

use crate::caption::CaptionReport;
use crate::enhancer::{CrossModalEnhancer, EnhancerConfig, FeatureGrid, TextEncoder, TokenSequence};
use crate::error::{Result, ScdError};
use crate::nn::{Init, ParamStore};
use crate::types::{ChangeMask, ImagePair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub encoder_id: String,
    pub feature_channels: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub num_classes: u8,
    pub input_resolution: u32,
}

impl BackboneSpec {
    pub fn toy() -> Self {
        Self {
            encoder_id: "toy".into(),
            feature_channels: 32,
            grid_height: 4,
            grid_width: 4,
            num_classes: 2,
            input_resolution: 64,
        }
    }

    pub fn patch14() -> Self {
        Self {
            encoder_id: "patch14".into(),
            feature_channels: 384,
            grid_height: 36,
            grid_width: 36,
            num_classes: 2,
            input_resolution: 504,
        }
    }

    pub fn with_classes(mut self, num_classes: u8) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 && self.num_classes != 4 {
            return Err(ScdError::InvalidConfig(format!(
                "num_classes must be 2 or 4, got {}",
                self.num_classes
            )));
        }
        let r = self.input_resolution as usize;
        if self.grid_height == 0 || self.grid_width == 0 || r % self.grid_height != 0 || r % self.grid_width != 0 {
            return Err(ScdError::InvalidConfig(format!(
                "resolution {r} is not a multiple of the {}x{} grid",
                self.grid_height, self.grid_width
            )));
        }
        match self.encoder_id.as_str() {
            "toy" => {
                if r != self.grid_height * 16 || self.grid_height != self.grid_width || self.feature_channels != 32 {
                    return Err(ScdError::InvalidConfig(
                        "toy encoder downsamples 16x to 32 channels on a square grid".into(),
                    ));
                }
            }
            "patch14" => {
                if r != self.grid_height * 14 || self.grid_height != self.grid_width {
                    return Err(ScdError::InvalidConfig(
                        "patch14 encoder needs resolution = 14 x grid".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Upsampling factor from the feature grid to the input raster.
    pub fn scale(&self) -> usize {
        self.input_resolution as usize / self.grid_height
    }
}

/// 2-D convolution with bias.
#[derive(Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Ok(Self {
            weight: store.param(
                &format!("{name}.weight"),
                &[out_ch, in_ch, kernel, kernel],
                Init::LecunUniform { fan_in },
            )?,
            bias: store.param(&format!("{name}.bias"), &[out_ch], Init::LecunUniform { fan_in })?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Shared-weight image encoder. Inputs are `(B, 3, R, R)` normalized rasters.
pub trait ImageEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn encode(&self, images: &Tensor) -> Result<FeatureGrid>;
}

/// Four stride-2 3x3 convolutions: 3 -> 8 -> 16 -> 32 -> 32 channels.
pub struct ToyEncoder {
    convs: Vec<Conv2d>,
}

impl ToyEncoder {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        let widths = [3, 8, 16, 32, 32];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(store, &format!("{name}.conv{i}"), w[0], w[1], 3, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { convs })
    }
}

impl ImageEncoder for ToyEncoder {
    fn id(&self) -> &str {
        "toy"
    }

    fn encode(&self, images: &Tensor) -> Result<FeatureGrid> {
        let mut x = images.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x)?;
            if i + 1 < self.convs.len() {
                x = x.relu()?;
            }
        }
        FeatureGrid::new(x)
    }
}

/// Non-overlapping 14x14 patch projection to 384 channels.
pub struct PatchEncoder {
    proj: Conv2d,
}

impl PatchEncoder {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            proj: Conv2d::new(store, &format!("{name}.patch"), 3, channels, 14, 14, 0)?,
        })
    }
}

impl ImageEncoder for PatchEncoder {
    fn id(&self) -> &str {
        "patch14"
    }

    fn encode(&self, images: &Tensor) -> Result<FeatureGrid> {
        FeatureGrid::new(self.proj.forward(images)?)
    }
}

/// Merge of T0 features with enhanced T1 features.
pub trait MergeModule: Send + Sync {
    fn merge(&self, f0: &FeatureGrid, f1: &FeatureGrid) -> Result<FeatureGrid>;
}

/// Concatenates `[f0, f1, f1 - f0]` and mixes back to C channels with a
/// pointwise convolution and ReLU.
#[derive(Clone)]
pub struct DifferenceMerge {
    mix: Conv2d,
}

impl DifferenceMerge {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            mix: Conv2d::new(store, &format!("{name}.mix"), 3 * channels, channels, 1, 1, 0)?,
        })
    }

    /// The `3C`-channel stack fed to the pointwise mix.
    pub fn stacked(&self, f0: &FeatureGrid, f1: &FeatureGrid) -> Result<Tensor> {
        if f0.shape() != f1.shape() {
            return Err(ScdError::Shape(format!(
                "merge inputs {:?} vs {:?}",
                f0.shape(),
                f1.shape()
            )));
        }
        let a = f0.tensor();
        let b = f1.tensor().to_dtype(a.dtype())?;
        let diff = (&b - a)?;
        Ok(Tensor::cat(&[a, &b, &diff], 1)?)
    }
}

impl MergeModule for DifferenceMerge {
    fn merge(&self, f0: &FeatureGrid, f1: &FeatureGrid) -> Result<FeatureGrid> {
        FeatureGrid::new(self.mix.forward(&self.stacked(f0, f1)?)?.relu()?)
    }
}

/// 3x3 conv + ReLU, 1x1 conv to K logits, nearest upsampling to input size.
#[derive(Clone)]
pub struct SegmentationHead {
    conv: Conv2d,
    classifier: Conv2d,
    scale: usize,
}

impl SegmentationHead {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, num_classes: usize, scale: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), channels, channels, 3, 1, 1)?,
            classifier: Conv2d::new(store, &format!("{name}.classifier"), channels, num_classes, 1, 1, 0)?,
            scale,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.dim(0).expect("4-d kernel")
    }

    pub fn forward(&self, merged: &FeatureGrid) -> Result<Tensor> {
        let x = self.conv.forward(merged.tensor())?.relu()?;
        upsample_nearest(&self.classifier.forward(&x)?, self.scale)
    }
}

/// Nearest-neighbour upsampling by an integer factor, built from broadcasts
/// so it stays differentiable.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, factor, w, factor))?
        .contiguous()?
        .reshape((b, c, h * factor, w * factor))?)
}

/// Stack rasters into `(B, 3, H, W)` scaled to `[-1, 1]`.
pub fn images_to_tensor(images: &[&RgbImage], dtype: DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(ScdError::Shape("no images".into()));
    };
    let (w, h) = first.dimensions();
    let mut data = Vec::with_capacity(images.len() * 3 * (w * h) as usize);
    for img in images {
        if img.dimensions() != (w, h) {
            return Err(ScdError::Shape("images in a batch differ in size".into()));
        }
        for c in 0..3 {
            data.extend(img.pixels().map(|p| p.0[c] as f32 / 127.5 - 1.0));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h as usize, w as usize), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-pixel argmax of `(B, K, H, W)` logits.
pub fn argmax_masks(logits: &Tensor) -> Result<Vec<ChangeMask>> {
    let (b, k, h, w) = logits.dims4()?;
    let labels = logits.argmax(1)?.to_dtype(DType::U32)?.to_vec3::<u32>()?;
    let mut out = Vec::with_capacity(b);
    for sample in labels {
        let flat: Vec<u8> = sample.into_iter().flatten().map(|v| v as u8).collect();
        out.push(ChangeMask::from_labels(w, h, k as u8, flat)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub enhancer: EnhancerConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            backbone: BackboneSpec::toy(),
            enhancer: EnhancerConfig::toy(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.enhancer.validate()?;
        let (b, e) = (&self.backbone, &self.enhancer);
        if b.feature_channels != e.backbone_channels || b.grid_height != e.grid_height || b.grid_width != e.grid_width {
            return Err(ScdError::InvalidConfig(format!(
                "backbone emits {}x{}x{}, enhancer expects {}x{}x{}",
                b.feature_channels, b.grid_height, b.grid_width, e.backbone_channels, e.grid_height, e.grid_width
            )));
        }
        Ok(())
    }
}

pub const MODEL_CONFIG_KEY: &str = "model_config";
const ENCODER_PREFIX: &str = "encoder.";

/// Full change-detection model. Encoder parameters are frozen; enhancer,
/// merge and head are trainable.
pub struct ScdModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: Box<dyn ImageEncoder>,
    enhancer: CrossModalEnhancer,
    merge: DifferenceMerge,
    head: SegmentationHead,
}

impl ScdModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.enhancer.precision, config.seed);
        let encoder: Box<dyn ImageEncoder> = match config.backbone.encoder_id.as_str() {
            "toy" => Box::new(ToyEncoder::new(&mut store, "encoder")?),
            "patch14" => Box::new(PatchEncoder::new(
                &mut store,
                "encoder",
                config.backbone.feature_channels,
            )?),
            other => {
                return Err(ScdError::EncoderUnavailable(format!(
                    "no built-in encoder {other:?}; attach one with ScdModel::with_encoder"
                )))
            }
        };
        store.freeze_prefix(ENCODER_PREFIX);
        Self::assemble(config, store, encoder)
    }

    /// Build around an externally provided frozen encoder.
    pub fn with_encoder(config: ModelConfig, encoder: Box<dyn ImageEncoder>) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(config.enhancer.precision, config.seed);
        Self::assemble(config, store, encoder)
    }

    fn assemble(config: ModelConfig, mut store: ParamStore, encoder: Box<dyn ImageEncoder>) -> Result<Self> {
        let enhancer = CrossModalEnhancer::new(&mut store, "enhancer", config.enhancer.clone())?;
        let c = config.backbone.feature_channels;
        let merge = DifferenceMerge::new(&mut store, "merge", c)?;
        let head = SegmentationHead::new(
            &mut store,
            "head",
            c,
            config.backbone.num_classes as usize,
            config.backbone.scale(),
        )?;
        Ok(Self {
            config,
            store,
            encoder,
            enhancer,
            merge,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.config.backbone
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn enhancer(&self) -> &CrossModalEnhancer {
        &self.enhancer
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn encode(&self, images: &Tensor) -> Result<FeatureGrid> {
        let (_, ch, h, w) = images.dims4()?;
        let r = self.config.backbone.input_resolution as usize;
        if ch != 3 || h != r || w != r {
            return Err(ScdError::Shape(format!(
                "encoder expects (B, 3, {r}, {r}), got {:?}",
                images.dims()
            )));
        }
        let grid = self
            .encoder
            .encode(&images.to_dtype(self.dtype())?)
            .map_err(|e| match e {
                e @ ScdError::EncoderUnavailable(_) => e,
                ScdError::Shape(m) => ScdError::Shape(m),
                other => ScdError::EncoderUnavailable(format!("{}: {other}", self.encoder.id())),
            })?;
        let (_, c, gh, gw) = grid.shape();
        let s = &self.config.backbone;
        if (c, gh, gw) != (s.feature_channels, s.grid_height, s.grid_width) {
            return Err(ScdError::Shape(format!(
                "encoder {} produced {c}x{gh}x{gw}, spec says {}x{}x{}",
                self.encoder.id(),
                s.feature_channels,
                s.grid_height,
                s.grid_width
            )));
        }
        // Frozen: no gradient flows into the encoder.
        FeatureGrid::new(grid.into_tensor().detach())
    }

    pub fn merge(&self, f0: &FeatureGrid, f1_enhanced: &FeatureGrid) -> Result<FeatureGrid> {
        self.merge.merge(f0, f1_enhanced)
    }

    pub fn segment(&self, merged: &FeatureGrid) -> Result<Tensor> {
        self.head.forward(merged)
    }

    /// Logits `(B, K, R, R)` for normalized image batches and text tokens.
    pub fn forward(&self, t0: &Tensor, t1: &Tensor, text: &TokenSequence) -> Result<Tensor> {
        let f0 = self.encode(t0)?;
        let f1 = self.encode(t1)?;
        let f1e = self.enhancer.forward(&f1, text)?;
        let merged = self.merge(&f0, &f1e)?;
        self.segment(&merged)
    }

    /// Logits for a batch of raster pairs with per-sample phrase lists.
    pub fn forward_batch(
        &self,
        pairs: &[(&RgbImage, &RgbImage)],
        phrases: &[Vec<String>],
        text_encoder: &dyn TextEncoder,
    ) -> Result<Tensor> {
        let t0: Vec<&RgbImage> = pairs.iter().map(|p| p.0).collect();
        let t1: Vec<&RgbImage> = pairs.iter().map(|p| p.1).collect();
        let t0 = images_to_tensor(&t0, self.dtype())?;
        let t1 = images_to_tensor(&t1, self.dtype())?;
        let text = self.enhancer.encode_text_batch(phrases, text_encoder)?;
        self.forward(&t0, &t1, &text.tokens)
    }

    /// Hash of frozen encoder parameters.
    pub fn frozen_fingerprint(&self) -> Result<String> {
        self.store.fingerprint_prefix(ENCODER_PREFIX)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, &[], HashMap::new())
    }

    /// Archive with the model config plus caller tensors and metadata.
    pub fn save_with(
        &self,
        path: &Path,
        extra: &[(String, Tensor)],
        mut metadata: HashMap<String, String>,
    ) -> Result<()> {
        metadata.insert(
            MODEL_CONFIG_KEY.into(),
            serde_json::to_string(&self.config).map_err(|e| ScdError::json("model config", e))?,
        );
        let bytes = self.store.to_bytes_with(extra, metadata)?;
        crate::fsutil::write_atomic(path, &bytes)
    }

    /// Load weights, ignoring any optimizer state stored alongside.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with(path, Some("optim."))?.0)
    }

    /// Rebuild from an archive; returns metadata and extra tensors under `extra_prefix`.
    pub fn load_with(
        path: &Path,
        extra_prefix: Option<&str>,
    ) -> Result<(Self, HashMap<String, String>, HashMap<String, Tensor>)> {
        let bytes = std::fs::read(path).map_err(|e| ScdError::io(format!("read {}", path.display()), e))?;
        let meta = crate::nn::read_archive_metadata(&bytes)?;
        let raw = meta
            .get(MODEL_CONFIG_KEY)
            .ok_or_else(|| ScdError::Checkpoint(format!("{} has no model config", path.display())))?;
        let config: ModelConfig = serde_json::from_str(raw).map_err(|e| ScdError::json("model config", e))?;
        let model = Self::new(config)?;
        let (meta, extras) = model.store.load_values_with(&bytes, extra_prefix)?;
        Ok((model, meta, extras))
    }

    /// Initial change mask for one pair: encode both images, enhance T1 with
    /// the T1 caption phrases, merge, segment, argmax. The mask is at the
    /// model's input resolution.
    pub fn predict_initial_mask(
        &self,
        pair: &ImagePair,
        report: &CaptionReport,
        text_encoder: &dyn TextEncoder,
    ) -> Result<ChangeMask> {
        let r = self.config.backbone.input_resolution;
        let pair = if pair.dims() == (r as usize, r as usize) {
            std::borrow::Cow::Borrowed(pair)
        } else {
            std::borrow::Cow::Owned(pair.clone().resampled(r))
        };
        let logits = self.forward_batch(
            &[(&pair.image_t0, &pair.image_t1)],
            &[report.t1_phrases()],
            text_encoder,
        )?;
        Ok(argmax_masks(&logits)?.remove(0))
    }
}

pub fn predict_initial_mask(
    model: &ScdModel,
    pair: &ImagePair,
    report: &CaptionReport,
    text_encoder: &dyn TextEncoder,
) -> Result<ChangeMask> {
    model.predict_initial_mask(pair, report, text_encoder)
}

/// Digest of a text encoder's output on a fixed probe; a frozen encoder's
/// digest never changes.
pub fn text_encoder_fingerprint(encoder: &dyn TextEncoder) -> Result<String> {
    let mut h = Sha256::new();
    for row in encoder.encode("a probe sentence: bench, scaffolding, green trees")? {
        for v in row {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests;
