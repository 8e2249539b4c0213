//! Text encoder adapters. The enhancer consumes the full sequence of
//! final-layer token embeddings; the encoder itself is frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Result, ScdError};

/// Maps a description string to `T x dim` token embeddings.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<Vec<f32>>>;
}

/// Deterministic offline stand-in: lower-cased word tokens wrapped in
/// `[CLS]`/`[SEP]`, each embedded by a hash-seeded Gaussian vector plus a
/// sinusoidal position term so embeddings depend on token order.
#[derive(Debug, Clone)]
pub struct HashingTextEncoder {
    dim: usize,
    position_scale: f32,
}

impl HashingTextEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            position_scale: 0.1,
        }
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        let mut tokens = vec!["[CLS]".to_string()];
        for word in text.split(|c: char| !c.is_alphanumeric()) {
            if !word.is_empty() {
                tokens.push(word.to_lowercase());
            }
        }
        tokens.push("[SEP]".to_string());
        tokens
    }

    fn token_vector(&self, token: &str) -> Vec<f32> {
        let digest = Sha256::digest(token.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (self.dim as f32).sqrt();
        (0..self.dim)
            .map(|_| {
                let v: f32 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect()
    }
}

impl Default for HashingTextEncoder {
    fn default() -> Self {
        Self::new(768)
    }
}

impl TextEncoder for HashingTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<Vec<f32>>> {
        Ok(Self::tokenize(text)
            .iter()
            .enumerate()
            .map(|(pos, tok)| {
                let mut v = self.token_vector(tok);
                for (i, x) in v.iter_mut().enumerate() {
                    let freq = 1.0 / 10000f32.powf((2 * (i / 2)) as f32 / self.dim as f32);
                    let angle = pos as f32 * freq;
                    let p = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                    *x += self.position_scale * p / (self.dim as f32).sqrt();
                }
                v
            })
            .collect())
    }
}

/// Returns the same embeddings for every input; for shape and ablation tests.
#[derive(Debug, Clone)]
pub struct FixedTextEncoder {
    tokens: Vec<Vec<f32>>,
}

impl FixedTextEncoder {
    pub fn new(tokens: Vec<Vec<f32>>) -> Result<Self> {
        let dim = tokens.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || tokens.iter().any(|t| t.len() != dim) {
            return Err(ScdError::Shape("fixed embeddings must be a nonempty rectangle".into()));
        }
        Ok(Self { tokens })
    }

    /// `count` one-hot rows: token i has a 1 at position i mod dim.
    pub fn identity_pattern(count: usize, dim: usize) -> Self {
        let tokens = (0..count)
            .map(|i| {
                let mut v = vec![0.0; dim];
                v[i % dim] = 1.0;
                v
            })
            .collect();
        Self { tokens }
    }
}

impl TextEncoder for FixedTextEncoder {
    fn dim(&self) -> usize {
        self.tokens[0].len()
    }

    fn encode(&self, _text: &str) -> Result<Vec<Vec<f32>>> {
        Ok(self.tokens.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_encoder_is_deterministic_and_order_aware() {
        let e = HashingTextEncoder::new(32);
        let a = e.encode("bench. green trees").unwrap();
        assert_eq!(a, e.encode("bench. green trees").unwrap());
        assert_eq!(a.len(), 5);
        let b = e.encode("green trees. bench").unwrap();
        assert_ne!(a[1], b[3], "same word at another position embeds differently");
    }
}
