//! Layer normalization and softmax as single graph nodes with hand-written
//! backward passes. Composing them from primitive ops makes the backward
//! pass several times slower than the forward one.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, DType, Error, Layout, Result, Shape, Tensor, D};
use num_traits::Float;

trait Real: Copy + candle_core::WithDType {
    fn f(self) -> f64;
    fn of(v: f64) -> Self;
}

impl Real for f32 {
    fn f(self) -> f64 {
        f64::from(self)
    }
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn f(self) -> f64 {
        self
    }
    fn of(v: f64) -> Self {
        v
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => Err(Error::Msg("fused op needs a contiguous input".into())),
    }
}

fn last_dim(layout: &Layout) -> usize {
    *layout.shape().dims().last().unwrap_or(&1)
}

struct LayerNormOp {
    eps: f64,
}

fn ln_forward<T: Real>(x: &[T], g: &[T], b: &[T], d: usize, eps: f64) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().map(|v| v.f()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.f() - mean).powi(2)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().zip(g).zip(b).map(|((v, g), b)| T::of((v.f() - mean) * rstd * g.f() + b.f())));
    }
    out
}

impl CustomOp3 for LayerNormOp {
    fn name(&self) -> &'static str {
        "fused-layer-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let d = last_dim(l1);
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(b)) => {
                CpuStorage::F32(ln_forward(contiguous(x, l1)?, contiguous(g, l2)?, contiguous(b, l3)?, d, self.eps))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(b)) => {
                CpuStorage::F64(ln_forward(contiguous(x, l1)?, contiguous(g, l2)?, contiguous(b, l3)?, d, self.eps))
            }
            _ => return Err(Error::Msg("fused layer norm supports f32 and f64".into())),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let d = gamma.elem_count();
        let xs = host(x)?;
        let gs = host(grad)?;
        let gm = host(gamma)?;
        let mut dx = Vec::with_capacity(xs.len());
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        let mut xhat = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for (row, grow) in xs.chunks(d).zip(gs.chunks(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + self.eps).sqrt();
            let (mut m1, mut m2) = (0.0, 0.0);
            for j in 0..d {
                xhat[j] = (row[j] - mean) * rstd;
                dxhat[j] = grow[j] * gm[j];
                dgamma[j] += grow[j] * xhat[j];
                dbeta[j] += grow[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat[j];
            }
            let (m1, m2) = (m1 / d as f64, m2 / d as f64);
            dx.extend((0..d).map(|j| rstd * (dxhat[j] - m1 - xhat[j] * m2)));
        }
        let dt = x.dtype();
        Ok((
            Some(device_tensor(dx, x.dims(), dt)?),
            Some(device_tensor(dgamma, gamma.dims(), dt)?),
            Some(device_tensor(dbeta, gamma.dims(), dt)?),
        ))
    }
}

struct SoftmaxOp;

fn softmax_forward<T: Float>(x: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            out.push(e);
        }
        let inv = sum.recip();
        for v in &mut out[start..] {
            *v = *v * inv;
        }
    }
    out
}

impl CustomOp1 for SoftmaxOp {
    fn name(&self) -> &'static str {
        "fused-softmax"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = last_dim(l);
        let out = match s {
            CpuStorage::F32(x) => CpuStorage::F32(softmax_forward(contiguous(x, l)?, d)),
            CpuStorage::F64(x) => CpuStorage::F64(softmax_forward(contiguous(x, l)?, d)),
            _ => return Err(Error::Msg("fused softmax supports f32 and f64".into())),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let dot = (grad * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((grad.broadcast_sub(&dot)? * res)?))
    }
}

struct BiasAddOp;

fn bias_forward<T: Float>(x: &[T], b: &[T]) -> Vec<T> {
    x.chunks(b.len()).flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c)).collect()
}

impl CustomOp2 for BiasAddOp {
    fn name(&self) -> &'static str {
        "bias-add"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        if last_dim(l1) != l2.shape().elem_count() {
            return Err(Error::Msg(format!("bias of shape {:?} does not match {:?}", l2.shape(), l1.shape())));
        }
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(b)) => CpuStorage::F32(bias_forward(contiguous(x, l1)?, contiguous(b, l2)?)),
            (CpuStorage::F64(x), CpuStorage::F64(b)) => CpuStorage::F64(bias_forward(contiguous(x, l1)?, contiguous(b, l2)?)),
            _ => return Err(Error::Msg("bias add supports f32 and f64".into())),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(&self, _x: &Tensor, b: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let n = b.elem_count();
        let rows = grad.elem_count() / n;
        let ones = Tensor::ones((1, rows), grad.dtype(), grad.device())?;
        let db = ones.matmul(&grad.reshape((rows, n))?)?.reshape(b.dims())?;
        Ok((Some(grad.clone()), Some(db)))
    }
}

fn host(t: &Tensor) -> Result<Vec<f64>> {
    t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()
}

fn device_tensor(v: Vec<f64>, dims: &[usize], dtype: DType) -> Result<Tensor> {
    Tensor::from_vec(v, dims, &candle_core::Device::Cpu)?.to_dtype(dtype)
}

/// Normalizes over the last axis, then scales by `gamma` and shifts by `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    x.contiguous()?.apply_op3(gamma, beta, LayerNormOp { eps })
}

/// Adds `bias` along the last axis of `x`.
pub fn bias_add(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op2(bias, BiasAddOp)
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(SoftmaxOp)
}
