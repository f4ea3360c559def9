use std::collections::BTreeMap;

use candle::{Device, Tensor, D};

use crate::error::{Error, Result};

/// Named weight lookup.
#[derive(Clone, Copy)]
pub(crate) struct Weights<'a>(pub &'a BTreeMap<String, Tensor>);

impl<'a> Weights<'a> {
    pub fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.0
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))
    }
}

/// `x @ w^T + b` over the last dimension of any-rank `x`; `w` is `[out, in]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let k = *dims.last().expect("linear input has at least one dimension");
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let mut y = x.reshape((rows, k))?.matmul(&w.t()?)?;
    if let Some(b) = b {
        y = y.broadcast_add(b)?;
    }
    let mut out = dims;
    *out.last_mut().unwrap() = w.dim(0)?;
    Ok(y.reshape(out)?)
}

pub(crate) fn linear_named(x: &Tensor, w: Weights, prefix: &str) -> Result<Tensor> {
    linear(x, w.get(&format!("{prefix}.weight"))?, Some(w.get(&format!("{prefix}.bias"))?))
}

pub(crate) fn layer_norm(x: &Tensor, w: Weights, prefix: &str) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let y = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(y
        .broadcast_mul(w.get(&format!("{prefix}.weight"))?)?
        .broadcast_add(w.get(&format!("{prefix}.bias"))?)?)
}

/// Multi-head self-attention over `[B, T, D]`.
pub(crate) fn attention(x: &Tensor, w: Weights, prefix: &str, heads: usize) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    let dh = d / heads;
    let qkv = linear_named(x, w, &format!("{prefix}.qkv"))?
        .reshape((b, t, 3, heads, dh))?
        .permute((2, 0, 3, 1, 4))?;
    let q = qkv.get(0)?.contiguous()?;
    let k = qkv.get(1)?.contiguous()?;
    let v = qkv.get(2)?.contiguous()?;
    let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
    let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
    let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
    linear_named(&y, w, &format!("{prefix}.proj"))
}

/// Pre-norm transformer block.
pub(crate) fn block(x: &Tensor, w: Weights, prefix: &str, heads: usize) -> Result<Tensor> {
    let h = layer_norm(x, w, &format!("{prefix}.norm1"))?;
    let x = (x + attention(&h, w, &format!("{prefix}.attn"), heads)?)?;
    let h = layer_norm(&x, w, &format!("{prefix}.norm2"))?;
    let h = linear_named(&h, w, &format!("{prefix}.fc1"))?.gelu()?;
    Ok((&x + linear_named(&h, w, &format!("{prefix}.fc2"))?)?)
}

pub(crate) fn conv2d(x: &Tensor, w: Weights, prefix: &str) -> Result<Tensor> {
    let weight = w.get(&format!("{prefix}.weight"))?;
    let k = weight.dim(2)?;
    let y = x.conv2d(weight, k / 2, 1, 1, 1)?;
    let b = w.get(&format!("{prefix}.bias"))?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// `[out, inp]` bilinear interpolation matrix with half-pixel centers and
/// clamped borders.
pub(crate) fn bilinear_matrix(out: usize, inp: usize) -> Vec<f32> {
    let mut m = vec![0f32; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        let f = src - i0 as f64;
        m[o * inp + i0] += (1.0 - f) as f32;
        m[o * inp + i1] += f as f32;
    }
    m
}

/// Bilinear upsampling of `[N, C, h, w]` written as two matrix products so it
/// is differentiable.
pub(crate) struct Upsampler {
    rows: Tensor,
    cols_t: Tensor,
}

impl Upsampler {
    pub fn new(h_in: usize, w_in: usize, h_out: usize, w_out: usize, device: &Device) -> Result<Self> {
        let rows = Tensor::from_vec(bilinear_matrix(h_out, h_in), (h_out, h_in), device)?;
        let cols = Tensor::from_vec(bilinear_matrix(w_out, w_in), (w_out, w_in), device)?;
        Ok(Self {
            rows,
            cols_t: cols.t()?.contiguous()?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.broadcast_matmul(&self.cols_t)?;
        Ok(self.rows.broadcast_matmul(&x)?)
    }
}
