use candle_core::{DType, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;
use crate::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

/// Additive attention bias for keys that must be ignored.
pub const MASKED: f64 = -1e9;

/// Applies a weight stored as `(in, out)` to the last axis of `x`.
fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (rows, inner) = (dims[..dims.len() - 1].iter().product::<usize>(), dims[dims.len() - 1]);
    let y = x.reshape((rows, inner))?.matmul(w)?;
    let y = crate::fused::bias_add(&y, b)?;
    let mut out = dims;
    *out.last_mut().unwrap() = w.dim(1)?;
    Ok(y.reshape(out)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, out: usize) -> Result<Self> {
        Self::with_std(ps, name, inp, out, (1.0 / inp as f64).sqrt())
    }

    pub fn with_std(ps: &mut ParamStore, name: &str, inp: usize, out: usize, std: f64) -> Result<Self> {
        Ok(Self { w: ps.normal(&format!("{name}.weight"), &[inp, out], std)?, b: ps.constant(&format!("{name}.bias"), &[out], 0.0)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        affine(x, &self.w, &self.b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    const EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            beta: ps.constant(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(crate::fused::layer_norm(x, &self.gamma, &self.beta, Self::EPS)?)
    }
}

/// Two linear layers with a SiLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self { fc1: Linear::new(ps, &format!("{name}.fc1"), inp, hidden)?, fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, out)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(crate::fused::softmax(x)?)
}

/// Inverted dropout with a mask drawn from `rng`.
pub fn dropout(x: &Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.elem_count()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

pub struct Attention {
    pub output: Tensor,
    /// `(B, heads, queries, keys)`; every row sums to one.
    pub weights: Tensor,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    kv: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim)?,
            kv: Linear::new(ps, &format!("{name}.kv"), dim, 2 * dim)?,
            out: Linear::new(ps, &format!("{name}.out"), dim, dim)?,
            heads,
        })
    }

    /// `queries` is `(B, Nq, d)`, `keys` is `(B, Nk, d)`; `bias` broadcasts
    /// against the `(B, heads, Nq, Nk)` score tensor.
    pub fn forward(&self, queries: &Tensor, keys: &Tensor, bias: Option<&Tensor>) -> Result<Attention> {
        let (b, nq, d) = queries.dims3()?;
        let nk = keys.dim(1)?;
        let dh = d / self.heads;
        let q = self.q.forward(queries)?.reshape((b, nq, self.heads, dh))?.transpose(1, 2)?.contiguous()?;
        let kv = self.kv.forward(keys)?.reshape((b, nk, 2, self.heads, dh))?;
        let k = kv.narrow(2, 0, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let v = kv.narrow(2, 1, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let weights = softmax_last(&scores)?;
        let mixed = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, nq, d))?;
        Ok(Attention { output: self.out.forward(&mixed)?, weights })
    }
}

/// Splits `(N, H, W, C)` into non-overlapping `p`x`p` patches, giving
/// `(N, H/p, W/p, p*p*C)`.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    if h % p != 0 || w % p != 0 {
        return Err(ModelError::Shape(format!("{h}x{w} is not divisible into {p}x{p} patches")));
    }
    Ok(x.reshape(&[n, h / p, p, w / p, p, c][..])?.permute([0, 1, 3, 2, 4, 5])?.contiguous()?.reshape((n, h / p, w / p, p * p * c))?)
}

/// Zero-padded 3x3 convolution on channels-last input, weights `(9*C, O)`.
pub fn conv3x3(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, h, wd, c) = x.dims4()?;
    let padded = x.pad_with_zeros(1, 1, 1)?.pad_with_zeros(2, 1, 1)?;
    let mut taps = Vec::with_capacity(9);
    for dy in 0..3 {
        for dx in 0..3 {
            taps.push(padded.narrow(1, dy, h)?.narrow(2, dx, wd)?);
        }
    }
    let cols = Tensor::cat(&taps, 3)?.reshape((n * h * wd, 9 * c))?;
    Ok(crate::fused::bias_add(&cols.matmul(w)?, b)?.reshape((n, h, wd, w.dim(1)?))?)
}

/// Key-padding bias of shape `(B, 1, 1, N)`: zero for kept keys and
/// [`MASKED`] for dropped ones.
pub fn key_padding_bias(keep: &[bool], batch: usize, dtype: DType) -> Result<Tensor> {
    let n = keep.len() / batch.max(1);
    let values: Vec<f64> = keep.iter().map(|&k| if k { 0.0 } else { MASKED }).collect();
    Ok(Tensor::from_vec(values, (batch, 1, 1, n), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
