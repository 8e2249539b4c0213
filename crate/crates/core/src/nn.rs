//! Minimal neural building blocks on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names and are
//! initialized from a seeded ChaCha stream, so a fixed seed gives
//! bit-identical weights. Layers hold clones of the store's tensors; the
//! clones share storage with the underlying [`Var`]s, so optimizer updates
//! are visible without rebuilding the layers.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ScdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
    /// Uniform in ±1/sqrt(fan_in) (Kaiming-uniform with a=sqrt(5), as torch's default).
    LecunUniform {
        fan_in: usize,
    },
    Normal {
        std: f64,
    },
    Values(Vec<f64>),
}

/// Named, seeded parameter collection.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    frozen: BTreeMap<String, bool>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(precision: Precision, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            frozen: BTreeMap::new(),
            dtype: precision.dtype(),
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(ScdError::InvalidConfig(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::XavierUniform { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..a)).collect()
            }
            Init::LecunUniform { fan_in } => {
                let a = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..a)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| ScdError::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Values(v) => {
                if v.len() != n {
                    return Err(ScdError::Shape(format!("{name}: {} values for {n} elements", v.len())));
                }
                v
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        self.frozen.insert(name.to_string(), false);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Variables eligible for optimization, in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| !self.frozen[*k])
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn freeze_all(&mut self) {
        for v in self.frozen.values_mut() {
            *v = true;
        }
    }

    /// Freeze every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (k, v) in self.frozen.iter_mut() {
            if k.starts_with(prefix) {
                *v = true;
            }
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.get(name).copied().unwrap_or(false)
    }

    /// Overwrite a parameter's value in place.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| ScdError::NotFound(format!("parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(ScdError::Shape(format!(
                "{name}: stored {:?}, assigned {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// SHA-256 over names, shapes and raw values.
    pub fn fingerprint(&self) -> Result<String> {
        self.fingerprint_prefix("")
    }

    /// Fingerprint restricted to parameters under `prefix`.
    pub fn fingerprint_prefix(&self, prefix: &str) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let flat = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in flat {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Flat named-tensor archive (safetensors) with string metadata.
    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        let bytes = self.to_bytes(metadata)?;
        crate::fsutil::write_atomic(path, &bytes)
    }

    pub fn to_bytes(&self, metadata: HashMap<String, String>) -> Result<Vec<u8>> {
        self.to_bytes_with(&[], metadata)
    }

    /// Archive bytes holding every parameter plus `extra` named tensors
    /// (optimizer state and the like).
    pub fn to_bytes_with(&self, extra: &[(String, Tensor)], metadata: HashMap<String, String>) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        let tensors = self
            .vars
            .iter()
            .map(|(k, v)| (k, v.as_tensor()))
            .chain(extra.iter().map(|(k, t)| (k, t)));
        for (name, tensor) in tensors {
            if extra.iter().any(|(k, _)| k == name) && self.vars.contains_key(name) {
                return Err(ScdError::Checkpoint(format!("extra tensor {name} shadows a parameter")));
            }
            let flat = tensor.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name.clone(), tensor.dims().to_vec(), bytes));
        }
        let views: Vec<(String, safetensors::tensor::TensorView<'_>)> = buffers
            .iter()
            .map(|(name, shape, bytes)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F64, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| ScdError::Checkpoint(e.to_string()))
            })
            .collect::<Result<_>>()?;
        safetensors::serialize(views, Some(metadata)).map_err(|e| ScdError::Checkpoint(e.to_string()))
    }

    /// Load values for every parameter in this store from an archive. Names
    /// and shapes must match exactly.
    pub fn load_values(&self, bytes: &[u8]) -> Result<HashMap<String, String>> {
        Ok(self.load_values_with(bytes, None)?.0)
    }

    /// Like [`load_values`](Self::load_values), additionally returning the
    /// tensors whose names start with `extra_prefix` instead of rejecting them.
    pub fn load_values_with(
        &self,
        bytes: &[u8],
        extra_prefix: Option<&str>,
    ) -> Result<(HashMap<String, String>, HashMap<String, Tensor>)> {
        let (_, meta) =
            safetensors::SafeTensors::read_metadata(bytes).map_err(|e| ScdError::Checkpoint(e.to_string()))?;
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| ScdError::Checkpoint(e.to_string()))?;
        for (name, var) in &self.vars {
            let view = st
                .tensor(name)
                .map_err(|_| ScdError::Checkpoint(format!("missing tensor {name}")))?;
            if view.shape() != var.dims() {
                return Err(ScdError::Checkpoint(format!(
                    "{name}: archive shape {:?}, model shape {:?}",
                    view.shape(),
                    var.dims()
                )));
            }
            let values = decode_f64(&view)?;
            let t = Tensor::from_vec(values, var.dims(), &self.device)?;
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        let mut extras = HashMap::new();
        let mut unexpected = Vec::new();
        for name in st.names() {
            if self.vars.contains_key(name) {
                continue;
            }
            match extra_prefix {
                Some(prefix) if name.starts_with(prefix) => {
                    let view = st.tensor(name).map_err(|e| ScdError::Checkpoint(e.to_string()))?;
                    let t = Tensor::from_vec(decode_f64(&view)?, view.shape(), &self.device)?;
                    extras.insert(name.to_string(), t.to_dtype(self.dtype)?);
                }
                _ => unexpected.push(name.to_string()),
            }
        }
        if !unexpected.is_empty() {
            unexpected.sort();
            let n = unexpected.len();
            unexpected.truncate(4);
            return Err(ScdError::Checkpoint(format!(
                "{n} unexpected tensors, e.g. {unexpected:?}"
            )));
        }
        Ok((meta.metadata().clone().unwrap_or_default(), extras))
    }
}

fn decode_f64(view: &safetensors::tensor::TensorView<'_>) -> Result<Vec<f64>> {
    let data = view.data();
    match view.dtype() {
        safetensors::Dtype::F64 => Ok(data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()),
        safetensors::Dtype::F32 => Ok(data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()),
        other => Err(ScdError::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

pub fn read_archive_metadata(bytes: &[u8]) -> Result<HashMap<String, String>> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| ScdError::Checkpoint(e.to_string()))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

/// Dense layer `y = x W^T + b` over the last dimension.
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(
            store,
            name,
            in_dim,
            out_dim,
            Init::XavierUniform {
                fan_in: in_dim,
                fan_out: out_dim,
            },
            Init::Zeros,
        )
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[out_dim, in_dim], weight)?,
            bias: store.param(&format!("{name}.bias"), &[out_dim], bias)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| ScdError::Shape("linear on scalar".into()))?;
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.reshape((rows, in_dim))?;
        let y = flat.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("nonempty") = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalization over the last dimension.
#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[dim], Init::Ones)?,
            beta: store.param(&format!("{name}.bias"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Group normalization for token layout `(B, N, C)`: statistics per sample
/// over all tokens and the channels of one group.
#[derive(Clone)]
pub struct GroupNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(ScdError::InvalidConfig(format!(
                "{channels} channels not divisible into {groups} groups"
            )));
        }
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[channels], Init::Ones)?,
            beta: store.param(&format!("{name}.bias"), &[channels], Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward_tokens(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        let g = self.groups;
        let grouped = x
            .reshape((b, n, g, c / g))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, g, n * (c / g)))?;
        let mean = grouped.mean_keepdim(D::Minus1)?;
        let centered = grouped.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let back = normed
            .reshape((b, g, n, c / g))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, n, c))?;
        Ok(back.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Numerically stable softmax over the last dimension. The max shift is
/// detached; softmax is invariant to it.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Two-layer ReLU MLP.
#[derive(Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu()?)
    }
}

pub fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ScdError::Numerical(what.to_string()))
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    cfg: AdamConfig,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let m = params
            .iter()
            .map(|(_, p)| p.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            params,
            m,
            v,
            step: 0,
            cfg,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m = ((&self.m[i] * self.cfg.beta1)? + (g * (1.0 - self.cfg.beta1))?)?;
            let v = ((&self.v[i] * self.cfg.beta2)? + (g.sqr()? * (1.0 - self.cfg.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.cfg.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// Moment tensors and step count, for checkpointing.
    pub fn state(&self) -> (u64, Vec<(String, Tensor, Tensor)>) {
        (
            self.step,
            self.params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .map(|((n, _), (m, v))| (n.clone(), m.clone(), v.clone()))
                .collect(),
        )
    }

    pub fn restore(&mut self, step: u64, moments: HashMap<String, (Tensor, Tensor)>) -> Result<()> {
        for (i, (name, var)) in self.params.iter().enumerate() {
            if let Some((m, v)) = moments.get(name) {
                if m.dims() != var.dims() {
                    return Err(ScdError::Checkpoint(format!("optimizer state shape for {name}")));
                }
                self.m[i] = m.to_dtype(var.dtype())?;
                self.v[i] = v.to_dtype(var.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let mk = |seed| {
            let mut s = ParamStore::new(Precision::F32, seed);
            Linear::new(&mut s, "l", 5, 7).unwrap();
            s.fingerprint().unwrap()
        };
        assert_eq!(mk(3), mk(3));
        assert_ne!(mk(3), mk(4));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [1000.0, 1000.0, -5.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut s = ParamStore::new(Precision::F64, 0);
        let ln = LayerNorm::new(&mut s, "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn archive_roundtrip_and_shape_check() {
        let mut a = ParamStore::new(Precision::F32, 1);
        Linear::new(&mut a, "l", 3, 2).unwrap();
        let mut meta = HashMap::new();
        meta.insert("k".to_string(), "v".to_string());
        let bytes = a.to_bytes(meta).unwrap();

        let mut b = ParamStore::new(Precision::F32, 2);
        Linear::new(&mut b, "l", 3, 2).unwrap();
        let meta = b.load_values(&bytes).unwrap();
        assert_eq!(meta["k"], "v");
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());

        let mut c = ParamStore::new(Precision::F32, 2);
        Linear::new(&mut c, "l", 4, 2).unwrap();
        assert!(matches!(c.load_values(&bytes), Err(ScdError::Checkpoint(_))));
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut s = ParamStore::new(Precision::F64, 0);
        let w = s.param("w", &[2], Init::Values(vec![3.0, -2.0])).unwrap();
        let mut opt = Adam::new(s.trainable(), AdamConfig::default()).unwrap();
        for _ in 0..500 {
            let loss = w.sqr().unwrap().sum_all().unwrap();
            let g = loss.backward().unwrap();
            opt.step(&g, 0.05).unwrap();
        }
        let v = w.to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-2), "{v:?}");
    }
}
