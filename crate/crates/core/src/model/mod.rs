//! The network: linear patch tokenizer with a learned positional table,
//! intrinsic and query embeddings, per-frame camera and register tokens,
//! alternating frame-wise and global attention, a camera head and dense heads
//! for points, depth and motion.
//!
//! Frame 0 carries its own learned camera and register tokens; there is no
//! other frame-index encoding, so the network is equivariant to permutations
//! of frames `1..N`.

mod camera;
mod checkpoint;
mod layers;
mod params;

pub use camera::{decode_camera, encode_camera, CAMERA_DIM};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC};
pub use params::ParamStore;

use std::collections::BTreeMap;

use candle::{DType, Device, IndexOp, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Vec3};
use crate::metrics::{FirstFramePrediction, TrackPredictor};
use crate::synthdata::SceneSample;
use layers::{block, conv2d, layer_norm, linear_named, Upsampler, Weights};

pub const NUM_REGISTERS: usize = 4;
/// Camera token plus registers.
pub const SPECIAL_TOKENS: usize = 1 + NUM_REGISTERS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of (frame-wise, global) block pairs.
    pub block_pairs: usize,
    /// Aggregator block indices whose patch tokens feed the dense heads.
    pub taps: Vec<usize>,
    pub camera_blocks: usize,
    pub head_channels: usize,
    /// Channels of the full-resolution image feature fused into the dense heads.
    pub skip_channels: usize,
    pub max_frames: usize,
    pub intrinsic_embedding: bool,
    pub query_embedding: bool,
    pub motion_head: bool,
    /// Frames per dense-head chunk; 0 runs all frames at once.
    pub head_chunk: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_width: 32,
            image_height: 32,
            patch_size: 8,
            dim: 64,
            heads: 4,
            mlp_ratio: 2,
            block_pairs: 2,
            taps: vec![1, 3],
            camera_blocks: 4,
            head_channels: 16,
            skip_channels: 8,
            max_frames: 16,
            intrinsic_embedding: true,
            query_embedding: true,
            motion_head: true,
            head_chunk: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || self.image_width % self.patch_size != 0 || self.image_height % self.patch_size != 0 {
            return fail(format!(
                "image {}x{} not divisible by patch {}",
                self.image_width, self.image_height, self.patch_size
            ));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.taps.len() < 2 {
            return fail("dense heads need at least two tap depths".into());
        }
        if let Some(t) = self.taps.iter().find(|t| **t >= 2 * self.block_pairs) {
            return fail(format!("tap {t} exceeds {} blocks", 2 * self.block_pairs));
        }
        if self.max_frames == 0 || self.mlp_ratio == 0 || self.head_channels == 0 {
            return fail("zero-sized model dimension".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn tokens_per_frame(&self) -> usize {
        SPECIAL_TOKENS + self.num_patches()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseKind {
    Point,
    Depth,
    Motion,
}

impl DenseKind {
    pub fn prefix(self) -> &'static str {
        match self {
            DenseKind::Point => "point_head",
            DenseKind::Depth => "depth_head",
            DenseKind::Motion => "motion_head",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DenseKind::Depth => 1,
            DenseKind::Point | DenseKind::Motion => 3,
        }
    }

    pub fn has_confidence(self) -> bool {
        !matches!(self, DenseKind::Motion)
    }
}

/// Network input: images `[N, 3, H, W]` in `[0, 1]` and per-frame intrinsics.
#[derive(Debug, Clone)]
pub struct FrameBatch {
    pub images: Tensor,
    pub intrinsics: Vec<Intrinsics>,
}

impl FrameBatch {
    pub fn new(images: Tensor, intrinsics: Vec<Intrinsics>) -> Result<Self> {
        let (n, c, h, w) = images.dims4()?;
        if c != 3 || n != intrinsics.len() {
            return Err(Error::ShapeMismatch(format!(
                "images {:?} with {} intrinsics",
                images.dims(),
                intrinsics.len()
            )));
        }
        if let Some(k) = intrinsics.iter().find(|k| k.width != w || k.height != h) {
            return Err(Error::ShapeMismatch(format!(
                "intrinsics for {}x{} with {w}x{h} images",
                k.width, k.height
            )));
        }
        Ok(Self { images, intrinsics })
    }

    pub fn from_sample(sample: &SceneSample) -> Result<Self> {
        let (w, h) = (sample.width(), sample.height());
        let mut data = Vec::with_capacity(sample.num_frames() * 3 * w * h);
        for f in &sample.frames {
            if f.rgb.width != w || f.rgb.height != h {
                return Err(Error::ShapeMismatch("frames of different sizes".into()));
            }
            for c in 0..3 {
                data.extend(f.rgb.data.iter().map(|p| p[c]));
            }
        }
        let images = Tensor::from_vec(data, (sample.num_frames(), 3, h, w), &Device::Cpu)?;
        Self::new(images, sample.frames.iter().map(|f| f.intrinsics).collect())
    }

    pub fn num_frames(&self) -> usize {
        self.intrinsics.len()
    }

    /// Reorders frames.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let idx = Tensor::from_vec(order.iter().map(|&i| i as u32).collect::<Vec<_>>(), order.len(), &Device::Cpu)?;
        Self::new(
            self.images.index_select(&idx, 0)?,
            order.iter().map(|&i| self.intrinsics[i]).collect(),
        )
    }
}

/// Model outputs, channel-first and in frame 0's camera coordinates.
#[derive(Debug, Clone)]
pub struct PredictionBundle {
    /// `[N, 3, H, W]`.
    pub points: Tensor,
    /// `[N, 1, H, W]`, strictly greater than 1.
    pub point_conf: Tensor,
    /// `[N, 1, H, W]`.
    pub depth: Tensor,
    pub depth_conf: Tensor,
    /// `[N, 3, H, W]` displacement of each pixel's point to the query time.
    pub motion: Option<Tensor>,
    /// `[N, 9]`.
    pub camera: Tensor,
    pub query: Option<usize>,
}

/// Row-major per-pixel vectors of frame `t` of a `[N, 3, H, W]` tensor.
pub fn frame_vectors(map: &Tensor, t: usize) -> Result<Vec<Vec3>> {
    let (_, c, h, w) = map.dims4()?;
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    let v = map.i(t)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let n = h * w;
    Ok((0..n).map(|k| Vec3::new(v[k], v[n + k], v[2 * n + k])).collect())
}

pub struct Network {
    cfg: ModelConfig,
    weights: BTreeMap<String, Tensor>,
    upsampler: Upsampler,
}

impl Network {
    /// Binds to the store's variables; gradients flow into them.
    pub fn new(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Self::with_weights(cfg, store.tracked())
    }

    /// Detached weights for evaluation: no graph is retained.
    pub fn detached(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Self::with_weights(cfg, store.detached())
    }

    fn with_weights(cfg: &ModelConfig, weights: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let (gh, gw) = cfg.grid();
        Ok(Self {
            upsampler: Upsampler::new(gh, gw, cfg.image_height, cfg.image_width, &Device::Cpu)?,
            cfg: cfg.clone(),
            weights,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn w(&self) -> Weights<'_> {
        Weights(&self.weights)
    }

    /// Patch tokens with positional encodings: `[N, P, D]`.
    pub fn patchify(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4()?;
        let p = self.cfg.patch_size;
        if h != self.cfg.image_height || w != self.cfg.image_width || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "model expects 3x{}x{} images, got {:?}",
                self.cfg.image_height,
                self.cfg.image_width,
                images.dims()
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let patches = (images - 0.5)?
            .reshape((n, 3, gh, p, gw, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .reshape((n, gh * gw, 3 * p * p))?;
        let tokens = linear_named(&patches, self.w(), "patch_embed")?;
        Ok(tokens.broadcast_add(self.w().get("pos_embed")?)?)
    }

    /// Linear embedding of `(fx / W, fy / W, py / H)`: `[N, D]`.
    pub fn intrinsic_embedding(&self, intrinsics: &[Intrinsics]) -> Result<Tensor> {
        let feats: Vec<f32> = intrinsics
            .iter()
            .flat_map(|k| {
                [
                    (k.fx / k.width as f64) as f32,
                    (k.fy / k.width as f64) as f32,
                    (k.py / k.height as f64) as f32,
                ]
            })
            .collect();
        let x = Tensor::from_vec(feats, (intrinsics.len(), 3), &Device::Cpu)?;
        linear_named(&x, self.w(), "intrinsic_embed")
    }

    /// Adds the query embedding to the patch tokens `[N, P, D]` of frame `q`.
    pub fn add_query_embedding(&self, patches: &Tensor, q: usize) -> Result<Tensor> {
        let n = patches.dim(0)?;
        if q >= n {
            return Err(Error::IndexOutOfRange { index: q, len: n });
        }
        let mut parts = Vec::with_capacity(3);
        if q > 0 {
            parts.push(patches.narrow(0, 0, q)?);
        }
        parts.push(patches.narrow(0, q, 1)?.broadcast_add(self.w().get("query_embed")?)?);
        if q + 1 < n {
            parts.push(patches.narrow(0, q + 1, n - q - 1)?);
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Full token grid `[N, 5 + P, D]`.
    pub fn tokenize(&self, batch: &FrameBatch, query: Option<usize>) -> Result<Tensor> {
        let n = batch.num_frames();
        if n == 0 || n > self.cfg.max_frames {
            return Err(Error::InvalidConfig(format!(
                "sequence of {n} frames, model accepts 1..={}",
                self.cfg.max_frames
            )));
        }
        let mut patches = self.patchify(&batch.images)?;
        if self.cfg.intrinsic_embedding {
            let e = self.intrinsic_embedding(&batch.intrinsics)?;
            patches = patches.broadcast_add(&e.unsqueeze(1)?)?;
        }
        if let (Some(q), true) = (query, self.cfg.query_embedding) {
            patches = self.add_query_embedding(&patches, q)?;
        }
        let d = self.cfg.dim;
        let first = self.w().get("tokens.first")?.unsqueeze(0)?;
        let mut special = vec![first];
        if n > 1 {
            special.push(self.w().get("tokens.other")?.unsqueeze(0)?.broadcast_as((n - 1, SPECIAL_TOKENS, d))?);
        }
        let special = Tensor::cat(&special, 0)?;
        Ok(Tensor::cat(&[special, patches], 1)?)
    }

    /// Aggregator block `k`: even blocks attend within a frame, odd blocks
    /// across all frames.
    pub fn aggregator_block(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        let prefix = format!("aggregator.{k}");
        if k % 2 == 0 {
            block(x, self.w(), &prefix, self.cfg.heads)
        } else {
            let (n, t, d) = x.dims3()?;
            let y = block(&x.reshape((1, n * t, d))?, self.w(), &prefix, self.cfg.heads)?;
            Ok(y.reshape((n, t, d))?)
        }
    }

    /// Outputs of every aggregator block.
    pub fn aggregate(&self, tokens: &Tensor) -> Result<Vec<Tensor>> {
        let mut outs = Vec::with_capacity(2 * self.cfg.block_pairs);
        let mut x = tokens.clone();
        for k in 0..2 * self.cfg.block_pairs {
            x = self.aggregator_block(&x, k)?;
            outs.push(x.clone());
        }
        Ok(outs)
    }

    /// Camera tokens `[N, D]` to camera encodings `[N, 9]`.
    pub fn camera_head(&self, camera_tokens: &Tensor) -> Result<Tensor> {
        let mut x = camera_tokens.unsqueeze(0)?;
        for k in 0..self.cfg.camera_blocks {
            x = block(&x, self.w(), &format!("camera_head.{k}"), self.cfg.heads)?;
        }
        let x = layer_norm(&x.squeeze(0)?, self.w(), "camera_head.norm")?;
        let raw = linear_named(&x, self.w(), "camera_head.out")?;
        let mut bias = [0f32; CAMERA_DIM];
        bias[0] = 1.0;
        let raw = raw.broadcast_add(&Tensor::new(&bias, &Device::Cpu)?)?;
        let quat = raw.narrow(1, 0, 4)?;
        let norm = quat.sqr()?.sum_keepdim(1)?.sqrt()?;
        let quat = quat.broadcast_div(&norm)?;
        Ok(Tensor::cat(&[quat, raw.narrow(1, 4, CAMERA_DIM - 4)?], 1)?)
    }

    /// Dense head on patch features of the tap layers (`[N, P, D]` each).
    pub fn dense_head(&self, kind: DenseKind, taps: &[Tensor], images: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let w = self.w();
        let p = kind.prefix();
        let (gh, gw) = self.cfg.grid();
        let n = images.dim(0)?;
        let c = self.cfg.head_channels;
        let mut acc: Option<Tensor> = None;
        for (i, f) in taps.iter().enumerate() {
            let proj = linear_named(f, w, &format!("{p}.proj.{i}"))?
                .transpose(1, 2)?
                .reshape((n, c, gh, gw))?;
            acc = Some(match acc {
                Some(a) => (a + proj)?,
                None => proj,
            });
        }
        let x = conv2d(&acc.expect("at least one tap"), w, &format!("{p}.fuse"))?.relu()?;
        let x = self.upsampler.forward(&x)?;
        let skip = conv2d(&(images - 0.5)?, w, &format!("{p}.skip"))?.relu()?;
        let x = Tensor::cat(&[x, skip], 1)?;
        let x = conv2d(&x, w, &format!("{p}.refine1"))?.relu()?;
        let x = conv2d(&x, w, &format!("{p}.refine2"))?.relu()?;
        let out = conv2d(&x, w, &format!("{p}.out"))?;
        let conf = if kind.has_confidence() {
            let raw = conv2d(&x, w, &format!("{p}.conf"))?.clamp(-30f32, 30f32)?;
            Some((raw.exp()? + 1.0)?)
        } else {
            None
        };
        Ok((out, conf))
    }

    fn dense_head_chunked(
        &self,
        kind: DenseKind,
        taps: &[Tensor],
        images: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let n = images.dim(0)?;
        let chunk = if self.cfg.head_chunk == 0 { n } else { self.cfg.head_chunk };
        if chunk >= n {
            return self.dense_head(kind, taps, images);
        }
        let mut outs = Vec::new();
        let mut confs = Vec::new();
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            let t: Vec<Tensor> = taps.iter().map(|f| f.narrow(0, start, len)).collect::<candle::Result<_>>()?;
            let (o, c) = self.dense_head(kind, &t, &images.narrow(0, start, len)?)?;
            outs.push(o);
            confs.extend(c);
            start += len;
        }
        let conf = if confs.is_empty() { None } else { Some(Tensor::cat(&confs, 0)?) };
        Ok((Tensor::cat(&outs, 0)?, conf))
    }

    /// One pass over a sequence. With `query = Some(q)` the query embedding
    /// marks frame `q` and the motion head predicts displacements to it.
    pub fn forward(&self, batch: &FrameBatch, query: Option<usize>) -> Result<PredictionBundle> {
        let tokens = self.tokenize(batch, query)?;
        let layers = self.aggregate(&tokens)?;
        let last = layers.last().expect("at least one block");
        let camera = self.camera_head(&last.narrow(1, 0, 1)?.squeeze(1)?)?;
        let np = self.cfg.num_patches();
        let taps: Vec<Tensor> = self
            .cfg
            .taps
            .iter()
            .map(|&k| layers[k].narrow(1, SPECIAL_TOKENS, np))
            .collect::<candle::Result<_>>()?;
        let (points, point_conf) = self.dense_head_chunked(DenseKind::Point, &taps, &batch.images)?;
        let (depth, depth_conf) = self.dense_head_chunked(DenseKind::Depth, &taps, &batch.images)?;
        let motion = match (query, self.cfg.motion_head) {
            (Some(_), true) => Some(self.dense_head_chunked(DenseKind::Motion, &taps, &batch.images)?.0),
            _ => None,
        };
        Ok(PredictionBundle {
            points,
            point_conf: point_conf.expect("point head has confidence"),
            depth,
            depth_conf: depth_conf.expect("depth head has confidence"),
            motion,
            camera,
            query,
        })
    }

    /// Raw weight access for tests and tools.
    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name)
    }
}

/// Evaluates a network on scene samples.
pub struct NetworkPredictor {
    pub network: Network,
}

impl TrackPredictor for NetworkPredictor {
    fn first_frame(&mut self, sample: &SceneSample, q: usize) -> Result<FirstFramePrediction> {
        let batch = FrameBatch::from_sample(sample)?;
        let out = self.network.forward(&batch, Some(q))?;
        let motion = out
            .motion
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model has no motion head".into()))?;
        Ok(FirstFramePrediction {
            points: frame_vectors(&out.points, 0)?,
            motion: frame_vectors(motion, 0)?,
        })
    }

    fn pointmaps(&mut self, sample: &SceneSample) -> Result<Vec<Vec<Vec3>>> {
        let batch = FrameBatch::from_sample(sample)?;
        let out = self.network.forward(&batch, Some(0))?;
        (0..sample.num_frames()).map(|t| frame_vectors(&out.points, t)).collect()
    }
}
