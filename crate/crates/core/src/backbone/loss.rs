use candle_core::{Device, Tensor};

use crate::error::{Result, ScdError};
use crate::nn::log_softmax;
use crate::types::ChangeMask;

/// Rescale positive weights to mean 1.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(ScdError::InvalidConfig(format!(
            "class weights must be positive, got {weights:?}"
        )));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    Ok(weights.iter().map(|w| w / mean).collect())
}

/// Inverse pixel frequency per class over `targets`, mean-normalized.
/// Classes with no pixels count as one pixel.
pub fn inverse_frequency_weights(targets: &[&ChangeMask], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    for t in targets {
        for (k, n) in t.histogram().iter().enumerate() {
            if *n > 0 && k >= num_classes {
                return Err(ScdError::Label {
                    label: k as u32,
                    num_classes,
                });
            }
            if k < num_classes {
                counts[k] += n;
            }
        }
    }
    let total: usize = counts.iter().sum();
    normalize_weights(
        &counts
            .iter()
            .map(|&c| total.max(1) as f64 / c.max(1) as f64)
            .collect::<Vec<_>>(),
    )
}

/// `[0.025, 0.975]` for the binary head; inverse frequency over the
/// training targets for the 4-class head.
pub fn default_class_weights(num_classes: usize, targets: &[&ChangeMask]) -> Result<Vec<f64>> {
    if num_classes == 2 {
        normalize_weights(&[0.025, 0.975])
    } else {
        inverse_frequency_weights(targets, num_classes)
    }
}

/// Class-weighted pixel cross-entropy: `sum_i w[y_i] * nll_i / sum_i w[y_i]`
/// over every pixel of every sample, with `logits` shaped `(B, K, H, W)`.
pub fn weighted_cross_entropy(logits: &Tensor, targets: &[ChangeMask], weights: &[f64]) -> Result<Tensor> {
    let (b, k, h, w) = logits.dims4()?;
    if targets.len() != b {
        return Err(ScdError::Shape(format!("{} targets for a batch of {b}", targets.len())));
    }
    if weights.len() != k {
        return Err(ScdError::Shape(format!(
            "{} class weights for {k} classes",
            weights.len()
        )));
    }
    let weights = normalize_weights(weights)?;
    let plane = h * w;
    let mut weight_map = vec![0.0f64; b * k * plane];
    let mut total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        if t.dims() != (w, h) {
            return Err(ScdError::Shape(format!("target {:?} vs logits {w}x{h}", t.dims())));
        }
        for (p, &label) in t.labels().iter().enumerate() {
            let label = label as usize;
            if label >= k {
                return Err(ScdError::Label {
                    label: label as u32,
                    num_classes: k,
                });
            }
            weight_map[(i * k + label) * plane + p] = weights[label];
            total += weights[label];
        }
    }
    let weight_map = Tensor::from_vec(weight_map, (b, k, h, w), &Device::Cpu)?.to_dtype(logits.dtype())?;
    let logp = log_softmax(logits, 1)?;
    let nll = (logp * weight_map)?.sum_all()?.neg()?;
    Ok((nll / total)?)
}
