//! Language-guided scene change detection toolkit.

pub mod annotation;
pub mod backbone;
pub mod caption;
pub mod curation;
pub mod enhancer;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod inference;
pub mod matching;
pub mod nn;
pub mod review;
pub mod synthetic;
pub mod types;

pub use error::{Result, ScdError};
pub use types::{
    overlap_ratio, to_binary, union_masks, Bitmap, ChangeClass, ChangeMask, CommonViewMask, ImagePair, MaskInstance,
    MaskSource,
};
