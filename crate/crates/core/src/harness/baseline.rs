//! Minimal per-query tracker used as the memory foil of the dense heads.
//!
//! Each query pixel of frame 0 becomes one token, initialized from the patch
//! feature under it plus an embedding of its position, and is refined by
//! cross-attention against the patch features of all frames at once. A
//! linear readout per frame gives one 3D position per query and frame.

use candle::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub struct QueryTokenBaseline {
    pub dim: usize,
    pub iterations: usize,
    patch_embed: Tensor,
    pos_embed: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    frame_embed: Tensor,
    readout: Tensor,
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data: Vec<f32> = (0..shape.0 * shape.1).map(|_| dist.sample(rng) as f32).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

impl QueryTokenBaseline {
    /// Random weights; only the memory profile matters for this model.
    pub fn new(dim: usize, patch_size: usize, max_frames: usize, iterations: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            dim,
            iterations,
            patch_embed: normal(&mut rng, (dim, 3 * patch_size * patch_size), 0.02)?,
            pos_embed: normal(&mut rng, (dim, 2), 0.02)?,
            wq: normal(&mut rng, (dim, dim), s)?,
            wk: normal(&mut rng, (dim, dim), s)?,
            wv: normal(&mut rng, (dim, dim), s)?,
            frame_embed: normal(&mut rng, (max_frames, dim), 0.02)?,
            readout: normal(&mut rng, (3, dim), s)?,
        })
    }

    /// Patch features `[N, P, D]` of `[N, 3, H, W]` images.
    pub fn features(&self, images: &Tensor, patch_size: usize) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        let p = patch_size;
        if c != 3 || h % p != 0 || w % p != 0 {
            return Err(Error::ShapeMismatch(format!("images {:?} with patch {p}", images.dims())));
        }
        let (gh, gw) = (h / p, w / p);
        let patches = images
            .reshape((n, 3, gh, p, gw, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .reshape((n * gh * gw, 3 * p * p))?;
        Ok(patches.matmul(&self.patch_embed.t()?)?.reshape((n, gh * gw, self.dim))?)
    }

    /// Tracks `queries` (pixel `(i, j)` of frame 0) through every frame:
    /// returns `[Q, N, 3]`.
    pub fn track(&self, features: &Tensor, grid: (usize, usize), patch_size: usize, queries: &[(usize, usize)]) -> Result<Tensor> {
        let (n, np, d) = features.dims3()?;
        let (gh, gw) = grid;
        if gh * gw != np || n > self.frame_embed.dim(0)? {
            return Err(Error::ShapeMismatch(format!("features {:?} for a {gh}x{gw} grid", features.dims())));
        }
        let q = queries.len();
        if q == 0 {
            return Ok(Tensor::zeros((0, n, 3), candle::DType::F32, &Device::Cpu)?);
        }
        let (w, h) = ((gw * patch_size) as f32, (gh * patch_size) as f32);
        let mut idx = Vec::with_capacity(q);
        let mut pos = Vec::with_capacity(2 * q);
        for &(i, j) in queries {
            let (pi, pj) = (i / patch_size, j / patch_size);
            if pi >= gw || pj >= gh {
                return Err(Error::PixelOutOfBounds {
                    i,
                    j,
                    width: gw * patch_size,
                    height: gh * patch_size,
                });
            }
            idx.push((pj * gw + pi) as u32);
            pos.extend([i as f32 / w, j as f32 / h]);
        }
        let idx = Tensor::from_vec(idx, q, &Device::Cpu)?;
        let pos = Tensor::from_vec(pos, (q, 2), &Device::Cpu)?;
        // one token per query
        let mut tokens = (features.get(0)?.index_select(&idx, 0)? + pos.matmul(&self.pos_embed.t()?)?)?;
        let frame_tokens = features.broadcast_add(&self.frame_embed.narrow(0, 0, n)?.unsqueeze(1)?)?;
        let all = frame_tokens.reshape((n * np, d))?;
        let keys = all.matmul(&self.wk.t()?)?;
        let values = all.matmul(&self.wv.t()?)?;
        let scale = 1.0 / (d as f64).sqrt();
        for _ in 0..self.iterations.max(1) {
            let queries = tokens.matmul(&self.wq.t()?)?;
            // [Q, N * P] attention buffer: the per-query state that grows with Q
            let scores = (queries.matmul(&keys.t()?)? * scale)?;
            let att = candle_nn::ops::softmax_last_dim(&scores)?;
            drop(scores);
            tokens = (tokens + att.matmul(&values)?)?;
        }
        // per-frame readout: token plus frame embedding
        let per_frame = tokens
            .unsqueeze(1)?
            .broadcast_add(&self.frame_embed.narrow(0, 0, n)?.unsqueeze(0)?)?;
        let out = per_frame.reshape((q * n, d))?.matmul(&self.readout.t()?)?;
        Ok(out.reshape((q, n, 3))?.contiguous()?)
    }

    /// Bytes of the query-dependent buffers for `q` queries over `n` frames
    /// of `np` patches; used to refuse runs that cannot fit.
    pub fn estimate_bytes(&self, q: usize, n: usize, np: usize) -> usize {
        // scores and softmax output, plus token, query and update copies
        4 * (2 * q * n * np + 6 * q * self.dim + 2 * q * n * 3)
    }
}

