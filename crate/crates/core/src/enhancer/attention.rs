use candle_core::{DType, Tensor};

use crate::error::{Result, ScdError};
use crate::nn::{softmax_last, Init, Linear, ParamStore};

/// Standard multi-head scaled dot-product attention.
#[derive(Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, zero_output: bool) -> Result<Self> {
        if dim % heads != 0 {
            return Err(ScdError::InvalidConfig(format!(
                "dim {dim} not divisible by {heads} heads"
            )));
        }
        let out = if zero_output {
            Linear::with_init(store, &format!("{name}.out"), dim, dim, Init::Zeros, Init::Zeros)?
        } else {
            Linear::new(store, &format!("{name}.out"), dim, dim)?
        };
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim)?,
            out,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Attention weights `(B, heads, Nq, Nk)`. `key_mask` is `(B, Nk)` with 1
    /// for valid keys and 0 for padding.
    pub fn weights(&self, query: &Tensor, key: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(key)?)?;
        let dh = q.dim(3)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dh as f64).sqrt())?;
        let scores = match key_mask {
            Some(mask) => {
                let (b, nk) = mask.dims2()?;
                let bias = ((mask.ones_like()? - mask)? * -1e9)?.reshape((b, 1, 1, nk))?;
                scores.broadcast_add(&bias.to_dtype(scores.dtype())?)?
            }
            None => scores,
        };
        softmax_last(&scores)
    }

    pub fn forward(&self, query: &Tensor, key: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let w = self.weights(query, key, key_mask)?;
        let v = self.split_heads(&self.v.forward(key)?)?;
        let ctx = w.matmul(&v)?;
        let (b, h, n, dh) = ctx.dims4()?;
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, n, h * dh))?;
        self.out.forward(&merged)
    }
}

/// Single-scale deformable self-attention over a `height x width` token grid.
///
/// Each query token predicts, per head, `points` sampling offsets around its
/// own grid position and a softmax weight per point. Values are read by
/// bilinear interpolation with zero padding outside the grid.
#[derive(Clone)]
pub struct DeformableSelfAttention {
    pub value: Linear,
    pub offsets: Linear,
    pub point_weights: Linear,
    pub out: Linear,
    heads: usize,
    points: usize,
    height: usize,
    width: usize,
}

/// Per-query sampling state, exposed for invariant checks.
pub struct DeformableSample {
    pub output: Tensor,
    /// `(B, N, heads, points)`, each row over points sums to 1.
    pub point_weights: Tensor,
}

impl DeformableSelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        points: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        if dim % heads != 0 {
            return Err(ScdError::InvalidConfig(format!(
                "dim {dim} not divisible by {heads} heads"
            )));
        }
        // Offsets start as a ring of directions, one per head, at increasing radius per point.
        let mut bias = Vec::with_capacity(heads * points * 2);
        for h in 0..heads {
            let theta = h as f64 * 2.0 * std::f64::consts::PI / heads as f64;
            let (s, c) = theta.sin_cos();
            let scale = c.abs().max(s.abs());
            for p in 0..points {
                bias.push(c / scale * (p + 1) as f64);
                bias.push(s / scale * (p + 1) as f64);
            }
        }
        Ok(Self {
            value: Linear::new(store, &format!("{name}.value"), dim, dim)?,
            offsets: Linear::with_init(
                store,
                &format!("{name}.offsets"),
                dim,
                heads * points * 2,
                Init::Zeros,
                Init::Values(bias),
            )?,
            point_weights: Linear::with_init(
                store,
                &format!("{name}.point_weights"),
                dim,
                heads * points,
                Init::Zeros,
                Init::Zeros,
            )?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim)?,
            heads,
            points,
            height: grid.0,
            width: grid.1,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.sample(x)?.output)
    }

    pub fn sample(&self, x: &Tensor) -> Result<DeformableSample> {
        let (b, n, d) = x.dims3()?;
        let (h, w) = (self.height, self.width);
        if n != h * w {
            return Err(ScdError::Shape(format!("{n} image tokens for a {h}x{w} grid")));
        }
        let heads = self.heads;
        let points = self.points;
        let dh = d / heads;
        let dev = x.device();
        let dtype = x.dtype();

        let value = self
            .value
            .forward(x)?
            .reshape((b, n, heads, dh))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b * heads * n, dh))?;

        let offsets = self.offsets.forward(x)?.reshape((b, n, heads, points, 2))?;
        let off_x = offsets.narrow(4, 0, 1)?.squeeze(4)?;
        let off_y = offsets.narrow(4, 1, 1)?.squeeze(4)?;
        let weights = softmax_last(&self.point_weights.forward(x)?.reshape((b, n, heads, points))?)?;

        // Reference positions in pixel units: token (r, c) sits at (c, r).
        let mut ref_x = Vec::with_capacity(n);
        let mut ref_y = Vec::with_capacity(n);
        for r in 0..h {
            for c in 0..w {
                ref_x.push(c as f64);
                ref_y.push(r as f64);
            }
        }
        let ref_x = Tensor::from_vec(ref_x, (1, n, 1, 1), dev)?.to_dtype(dtype)?;
        let ref_y = Tensor::from_vec(ref_y, (1, n, 1, 1), dev)?.to_dtype(dtype)?;
        let px = off_x.broadcast_add(&ref_x)?;
        let py = off_y.broadcast_add(&ref_y)?;

        let px_host = px.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let py_host = py.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let total = px_host.len();
        let mut x0s = Vec::with_capacity(total);
        let mut y0s = Vec::with_capacity(total);
        let mut valid = Vec::with_capacity(total * 4);
        let mut index = Vec::with_capacity(total * 4);
        for (i, (&sx, &sy)) in px_host.iter().zip(&py_host).enumerate() {
            if !sx.is_finite() || !sy.is_finite() {
                return Err(ScdError::Numerical("deformable sampling locations".into()));
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            x0s.push(x0);
            y0s.push(y0);
            // flat layout is (b, n, head, point)
            let head = (i / points) % heads;
            let batch = i / (points * heads * n);
            let base = (batch * heads + head) * n;
            for (dy, dx) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                let cx = x0 + dx;
                let cy = y0 + dy;
                let inside = cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64;
                valid.push(if inside { 1.0 } else { 0.0 });
                index.push(if inside {
                    (base + cy as usize * w + cx as usize) as u32
                } else {
                    0
                });
            }
        }
        let shape = (b, n, heads, points);
        let x0 = Tensor::from_vec(x0s, shape, dev)?.to_dtype(dtype)?;
        let y0 = Tensor::from_vec(y0s, shape, dev)?.to_dtype(dtype)?;
        let fx = (&px - &x0)?;
        let fy = (&py - &y0)?;
        let gx = (fx.ones_like()? - &fx)?;
        let gy = (fy.ones_like()? - &fy)?;
        // Corner order matches the index loop: (y0,x0), (y0,x1), (y1,x0), (y1,x1).
        let corners = Tensor::stack(&[(&gx * &gy)?, (&fx * &gy)?, (&gx * &fy)?, (&fx * &fy)?], 4)?;
        let valid = Tensor::from_vec(valid, (b, n, heads, points, 4), dev)?.to_dtype(dtype)?;
        let combined =
            corners
                .mul(&valid)?
                .broadcast_mul(&weights.unsqueeze(4)?)?
                .reshape((b, n, heads, points * 4, 1))?;

        let index = Tensor::from_vec(index, total * 4, dev)?;
        let gathered = value.index_select(&index, 0)?.reshape((b, n, heads, points * 4, dh))?;
        let sampled = gathered.broadcast_mul(&combined)?.sum(3)?.reshape((b, n, d))?;
        Ok(DeformableSample {
            output: self.out.forward(&sampled)?,
            point_weights: weights,
        })
    }
}
