//! Cross-modal feature enhancer.
//!
//! Backbone features of the T1 image are projected to fusion-width tokens
//! (1x1 projection + group norm, row-major flatten), fused with projected
//! caption token embeddings through a stack of layers, and mapped back to a
//! backbone-shaped feature grid. Each layer runs deformable self-attention
//! over image tokens, vanilla self-attention over text tokens, then
//! bidirectional cross-attention (text-to-image and image-to-text).
//!
//! The cross-attention output projections start at zero, so an untrained
//! enhancer leaves the visual path independent of the caption.

mod attention;
pub mod text;

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use attention::{DeformableSample, DeformableSelfAttention, MultiHeadAttention};
pub use text::{FixedTextEncoder, HashingTextEncoder, TextEncoder};

use crate::caption::join_phrases;
use crate::error::{Result, ScdError};
use crate::nn::{ensure_finite, FeedForward, GroupNorm, Init, LayerNorm, Linear, ParamStore, Precision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerConfig {
    pub num_layers: usize,
    pub fusion_dim: usize,
    pub text_input_dim: usize,
    pub num_heads: usize,
    pub deformable_points: usize,
    pub ffn_dim: usize,
    pub backbone_channels: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub norm_groups: usize,
    /// Group norm after the image projection. Disabling it makes
    /// project/unproject a pair of plain linear maps.
    pub image_group_norm: bool,
    pub zero_init_cross: bool,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            fusion_dim: 256,
            text_input_dim: 768,
            num_heads: 8,
            deformable_points: 4,
            ffn_dim: 1024,
            backbone_channels: 384,
            grid_height: 36,
            grid_width: 36,
            norm_groups: 32,
            image_group_norm: true,
            zero_init_cross: true,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl EnhancerConfig {
    /// Desk-scale geometry: 4x4 grid, 16-d fusion, 2 heads, 2 layers.
    pub fn toy() -> Self {
        Self {
            num_layers: 2,
            fusion_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            backbone_channels: 32,
            grid_height: 4,
            grid_width: 4,
            norm_groups: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(ScdError::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.num_heads == 0 || self.fusion_dim % self.num_heads != 0 {
            return Err(ScdError::InvalidConfig(format!(
                "fusion_dim {} not divisible by num_heads {}",
                self.fusion_dim, self.num_heads
            )));
        }
        if self.image_group_norm && (self.norm_groups == 0 || self.fusion_dim % self.norm_groups != 0) {
            return Err(ScdError::InvalidConfig(format!(
                "fusion_dim {} not divisible by norm_groups {}",
                self.fusion_dim, self.norm_groups
            )));
        }
        if self.deformable_points == 0 || self.grid_height == 0 || self.grid_width == 0 {
            return Err(ScdError::InvalidConfig("empty sampling grid".into()));
        }
        Ok(())
    }

    pub fn num_image_tokens(&self) -> usize {
        self.grid_height * self.grid_width
    }
}

/// Spatial feature map `(B, C, H, W)`.
#[derive(Debug, Clone)]
pub struct FeatureGrid(Tensor);

impl FeatureGrid {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims4()?;
        Ok(Self(values))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `(B, C, H, W)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.0.dims4().expect("validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Image,
    Text,
}

/// Token form `(B, N, D)` with an optional `(B, N)` validity mask.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub values: Tensor,
    pub mask: Option<Tensor>,
    pub kind: TokenKind,
}

impl TokenSequence {
    /// `(B, N, D)`
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dims3().expect("token sequences are 3-D")
    }
}

/// Text tokens plus which batch rows fell back to the null token.
#[derive(Debug, Clone)]
pub struct TextEncoding {
    pub tokens: TokenSequence,
    pub null_rows: Vec<bool>,
}

/// Attention tensors captured from one layer.
pub struct AttentionMaps {
    pub deformable_point_weights: Tensor,
    pub text_self: Tensor,
    pub text_to_image: Tensor,
    pub image_to_text: Tensor,
}

#[derive(Clone)]
pub struct EnhancerLayer {
    image_attn: DeformableSelfAttention,
    image_norm1: LayerNorm,
    image_ffn: FeedForward,
    image_norm2: LayerNorm,
    text_attn: MultiHeadAttention,
    text_norm1: LayerNorm,
    text_ffn: FeedForward,
    text_norm2: LayerNorm,
    cross_image_norm: LayerNorm,
    cross_text_norm: LayerNorm,
    text_to_image: MultiHeadAttention,
    image_to_text: MultiHeadAttention,
}

impl EnhancerLayer {
    fn new(store: &mut ParamStore, name: &str, cfg: &EnhancerConfig) -> Result<Self> {
        let d = cfg.fusion_dim;
        let p = |s: &str| format!("{name}.{s}");
        Ok(Self {
            image_attn: DeformableSelfAttention::new(
                store,
                &p("image_attn"),
                d,
                cfg.num_heads,
                cfg.deformable_points,
                (cfg.grid_height, cfg.grid_width),
            )?,
            image_norm1: LayerNorm::new(store, &p("image_norm1"), d)?,
            image_ffn: FeedForward::new(store, &p("image_ffn"), d, cfg.ffn_dim)?,
            image_norm2: LayerNorm::new(store, &p("image_norm2"), d)?,
            text_attn: MultiHeadAttention::new(store, &p("text_attn"), d, cfg.num_heads, false)?,
            text_norm1: LayerNorm::new(store, &p("text_norm1"), d)?,
            text_ffn: FeedForward::new(store, &p("text_ffn"), d, cfg.ffn_dim)?,
            text_norm2: LayerNorm::new(store, &p("text_norm2"), d)?,
            cross_image_norm: LayerNorm::new(store, &p("cross_image_norm"), d)?,
            cross_text_norm: LayerNorm::new(store, &p("cross_text_norm"), d)?,
            text_to_image: MultiHeadAttention::new(store, &p("text_to_image"), d, cfg.num_heads, cfg.zero_init_cross)?,
            image_to_text: MultiHeadAttention::new(store, &p("image_to_text"), d, cfg.num_heads, cfg.zero_init_cross)?,
        })
    }

    fn image_path(&self, img: &Tensor) -> Result<Tensor> {
        let img = self.image_norm1.forward(&(img + self.image_attn.forward(img)?)?)?;
        self.image_norm2.forward(&(&img + self.image_ffn.forward(&img)?)?)
    }

    fn text_path(&self, txt: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let txt = self
            .text_norm1
            .forward(&(txt + self.text_attn.forward(txt, txt, mask)?)?)?;
        self.text_norm2.forward(&(&txt + self.text_ffn.forward(&txt)?)?)
    }

    fn forward(&self, img: &Tensor, txt: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let img = self.image_path(img)?;
        let txt = self.text_path(txt, mask)?;
        let img_n = self.cross_image_norm.forward(&img)?;
        let txt_n = self.cross_text_norm.forward(&txt)?;
        // Both directions read the pre-update tokens.
        let to_img = self.text_to_image.forward(&img_n, &txt_n, mask)?;
        let to_txt = self.image_to_text.forward(&txt_n, &img_n, None)?;
        Ok(((img + to_img)?, (txt + to_txt)?))
    }

    fn attention_maps(&self, img: &Tensor, txt: &Tensor, mask: Option<&Tensor>) -> Result<AttentionMaps> {
        let deformable_point_weights = self.image_attn.sample(img)?.point_weights;
        let text_self = self.text_attn.weights(txt, txt, mask)?;
        let img = self.image_path(img)?;
        let txt = self.text_path(txt, mask)?;
        let img_n = self.cross_image_norm.forward(&img)?;
        let txt_n = self.cross_text_norm.forward(&txt)?;
        Ok(AttentionMaps {
            deformable_point_weights,
            text_self,
            text_to_image: self.text_to_image.weights(&img_n, &txt_n, mask)?,
            image_to_text: self.image_to_text.weights(&txt_n, &img_n, None)?,
        })
    }
}

#[derive(Clone)]
pub struct CrossModalEnhancer {
    config: EnhancerConfig,
    image_proj: Linear,
    image_norm: Option<GroupNorm>,
    text_proj: Linear,
    null_token: Tensor,
    layers: Vec<EnhancerLayer>,
    unproj: Linear,
}

impl CrossModalEnhancer {
    /// Register all enhancer parameters under `prefix` in `store`.
    pub fn new(store: &mut ParamStore, prefix: &str, config: EnhancerConfig) -> Result<Self> {
        config.validate()?;
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let d = config.fusion_dim;
        let image_proj = Linear::with_init(
            store,
            &p("image_proj"),
            config.backbone_channels,
            d,
            Init::LecunUniform {
                fan_in: config.backbone_channels,
            },
            Init::Zeros,
        )?;
        let image_norm = if config.image_group_norm {
            Some(GroupNorm::new(store, &p("image_norm"), config.norm_groups, d)?)
        } else {
            None
        };
        let text_proj = Linear::new(store, &p("text_proj"), config.text_input_dim, d)?;
        let null_token = store.param(&p("null_token"), &[1, 1, d], Init::Normal { std: 0.02 })?;
        let layers = (0..config.num_layers)
            .map(|i| EnhancerLayer::new(store, &p(&format!("layers.{i}")), &config))
            .collect::<Result<Vec<_>>>()?;
        let unproj = Linear::with_init(
            store,
            &p("unproj"),
            d,
            config.backbone_channels,
            Init::LecunUniform { fan_in: d },
            Init::Zeros,
        )?;
        Ok(Self {
            config,
            image_proj,
            image_norm,
            text_proj,
            null_token,
            layers,
            unproj,
        })
    }

    /// Fresh store seeded from the config.
    pub fn standalone(config: EnhancerConfig) -> Result<(ParamStore, Self)> {
        let mut store = ParamStore::new(config.precision, config.seed);
        let e = Self::new(&mut store, "", config)?;
        Ok((store, e))
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.config
    }

    pub fn image_projection(&self) -> &Linear {
        &self.image_proj
    }

    pub fn unprojection(&self) -> &Linear {
        &self.unproj
    }

    fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    /// Encode one caption (list of phrases) to text tokens `(1, T, D)`.
    pub fn encode_text(&self, phrases: &[String], encoder: &dyn TextEncoder) -> Result<TextEncoding> {
        self.encode_text_batch(&[phrases.to_vec()], encoder)
    }

    /// Encode a batch of captions, padding to the longest with a mask. An
    /// empty phrase list becomes the learned null token (T=1).
    pub fn encode_text_batch(&self, batch: &[Vec<String>], encoder: &dyn TextEncoder) -> Result<TextEncoding> {
        if batch.is_empty() {
            return Err(ScdError::Shape("empty text batch".into()));
        }
        if encoder.dim() != self.config.text_input_dim {
            return Err(ScdError::Shape(format!(
                "text encoder dim {} vs configured {}",
                encoder.dim(),
                self.config.text_input_dim
            )));
        }
        let d = self.config.fusion_dim;
        let mut rows = Vec::with_capacity(batch.len());
        let mut null_rows = Vec::with_capacity(batch.len());
        for phrases in batch {
            if phrases.is_empty() {
                rows.push(self.null_token.clone());
                null_rows.push(true);
                continue;
            }
            let emb = encoder.encode(&join_phrases(phrases))?;
            let t = emb.len();
            if t == 0 || emb.iter().any(|v| v.len() != self.config.text_input_dim) {
                return Err(ScdError::Shape(
                    "text encoder returned a ragged or empty sequence".into(),
                ));
            }
            let flat: Vec<f32> = emb.into_iter().flatten().collect();
            let raw =
                Tensor::from_vec(flat, (1, t, self.config.text_input_dim), &Device::Cpu)?.to_dtype(self.dtype())?;
            rows.push(self.text_proj.forward(&raw)?);
            null_rows.push(false);
        }
        let max_t = rows.iter().map(|r| r.dim(1)).collect::<candle_core::Result<Vec<_>>>()?;
        let max_t = max_t.into_iter().max().expect("nonempty batch");
        let mut padded = Vec::with_capacity(rows.len());
        let mut mask = Vec::with_capacity(rows.len() * max_t);
        for r in rows {
            let t = r.dim(1)?;
            mask.extend((0..max_t).map(|i| if i < t { 1.0f64 } else { 0.0 }));
            if t < max_t {
                let pad = Tensor::zeros((1, max_t - t, d), r.dtype(), r.device())?;
                padded.push(Tensor::cat(&[&r, &pad], 1)?);
            } else {
                padded.push(r);
            }
        }
        let values = Tensor::cat(&padded, 0)?;
        let needs_mask = mask.iter().any(|&m| m == 0.0);
        let mask = if needs_mask {
            Some(Tensor::from_vec(mask, (batch.len(), max_t), &Device::Cpu)?.to_dtype(self.dtype())?)
        } else {
            None
        };
        Ok(TextEncoding {
            tokens: TokenSequence {
                values,
                mask,
                kind: TokenKind::Text,
            },
            null_rows,
        })
    }

    /// `(B, C, H, W)` -> `(B, H*W, D)`; token `r*W + c` is grid cell `(r, c)`.
    pub fn project_image(&self, grid: &FeatureGrid) -> Result<TokenSequence> {
        let (b, c, h, w) = grid.shape();
        if c != self.config.backbone_channels {
            return Err(ScdError::Shape(format!(
                "grid has {c} channels, enhancer expects {}",
                self.config.backbone_channels
            )));
        }
        let tokens = grid
            .tensor()
            .to_dtype(self.dtype())?
            .reshape((b, c, h * w))?
            .transpose(1, 2)?
            .contiguous()?;
        let mut projected = self.image_proj.forward(&tokens)?;
        if let Some(norm) = &self.image_norm {
            projected = norm.forward_tokens(&projected)?;
        }
        Ok(TokenSequence {
            values: projected,
            mask: None,
            kind: TokenKind::Image,
        })
    }

    /// `(B, H*W, D)` -> `(B, C, H, W)` using the configured grid.
    pub fn unproject_image(&self, tokens: &TokenSequence) -> Result<FeatureGrid> {
        let (b, n, d) = tokens.shape();
        let (h, w) = (self.config.grid_height, self.config.grid_width);
        if n != h * w {
            return Err(ScdError::Shape(format!("{n} tokens do not fill a {h}x{w} grid")));
        }
        if d != self.config.fusion_dim {
            return Err(ScdError::Shape(format!(
                "token dim {d} vs fusion dim {}",
                self.config.fusion_dim
            )));
        }
        let mapped = self.unproj.forward(&tokens.values)?;
        let c = self.config.backbone_channels;
        FeatureGrid::new(mapped.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
    }

    fn check_pair(&self, image: &TokenSequence, text: &TokenSequence) -> Result<()> {
        let (bi, ni, di) = image.shape();
        let (bt, _, dt) = text.shape();
        if bi != bt {
            return Err(ScdError::Shape(format!("image batch {bi} vs text batch {bt}")));
        }
        if di != self.config.fusion_dim || dt != self.config.fusion_dim {
            return Err(ScdError::Shape(format!(
                "token dims image {di}, text {dt}, fusion {}",
                self.config.fusion_dim
            )));
        }
        if ni != self.config.num_image_tokens() {
            return Err(ScdError::Shape(format!(
                "{ni} image tokens for a {}x{} grid",
                self.config.grid_height, self.config.grid_width
            )));
        }
        Ok(())
    }

    /// Run every enhancement layer; shapes are preserved.
    pub fn enhance(&self, image: &TokenSequence, text: &TokenSequence) -> Result<(TokenSequence, TokenSequence)> {
        self.check_pair(image, text)?;
        let mut img = image.values.clone();
        let mut txt = text.values.clone();
        for layer in &self.layers {
            (img, txt) = layer.forward(&img, &txt, text.mask.as_ref())?;
        }
        ensure_finite(&img, "enhanced image tokens")?;
        ensure_finite(&txt, "enhanced text tokens")?;
        Ok((
            TokenSequence {
                values: img,
                mask: None,
                kind: TokenKind::Image,
            },
            TokenSequence {
                values: txt,
                mask: text.mask.clone(),
                kind: TokenKind::Text,
            },
        ))
    }

    /// The image branch with every cross-attention sublayer removed.
    pub fn enhance_image_only(&self, image: &TokenSequence) -> Result<TokenSequence> {
        let mut img = image.values.clone();
        for layer in &self.layers {
            img = layer.image_path(&img)?;
        }
        Ok(TokenSequence {
            values: img,
            mask: None,
            kind: TokenKind::Image,
        })
    }

    /// Attention weights of every layer along the forward pass.
    pub fn attention_maps(&self, image: &TokenSequence, text: &TokenSequence) -> Result<Vec<AttentionMaps>> {
        self.check_pair(image, text)?;
        let mut img = image.values.clone();
        let mut txt = text.values.clone();
        let mut maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            maps.push(layer.attention_maps(&img, &txt, text.mask.as_ref())?);
            (img, txt) = layer.forward(&img, &txt, text.mask.as_ref())?;
        }
        Ok(maps)
    }

    /// Enhanced T1 feature: project, fuse with text, unproject.
    pub fn forward(&self, grid: &FeatureGrid, text: &TokenSequence) -> Result<FeatureGrid> {
        let tokens = self.project_image(grid)?;
        let (enhanced, _) = self.enhance(&tokens, text)?;
        self.unproject_image(&enhanced)
    }
}

pub const CONFIG_METADATA_KEY: &str = "enhancer_config";

/// Write the enhancer's parameters with its config in the archive header.
pub fn save_enhancer(store: &ParamStore, config: &EnhancerConfig, path: &Path) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert(
        CONFIG_METADATA_KEY.to_string(),
        serde_json::to_string(config).map_err(|e| ScdError::json("enhancer config", e))?,
    );
    store.save(path, meta)
}

/// Rebuild an enhancer from an archive written by [`save_enhancer`].
pub fn load_enhancer(path: &Path) -> Result<(ParamStore, CrossModalEnhancer)> {
    let bytes = std::fs::read(path).map_err(|e| ScdError::io(format!("read {}", path.display()), e))?;
    let meta = crate::nn::read_archive_metadata(&bytes)?;
    let raw = meta
        .get(CONFIG_METADATA_KEY)
        .ok_or_else(|| ScdError::Checkpoint("archive has no enhancer config".into()))?;
    let config: EnhancerConfig = serde_json::from_str(raw).map_err(|e| ScdError::json("enhancer config", e))?;
    let (store, enhancer) = CrossModalEnhancer::standalone(config)?;
    store.load_values(&bytes)?;
    Ok((store, enhancer))
}
