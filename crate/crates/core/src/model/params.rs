use std::collections::BTreeMap;

use candle::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DenseKind, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push(specs: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    specs.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

fn push_linear(specs: &mut Vec<ParamSpec>, prefix: &str, out: usize, inp: usize) {
    push(specs, format!("{prefix}.weight"), &[out, inp], Init::FanIn);
    push(specs, format!("{prefix}.bias"), &[out], Init::Zeros);
}

fn push_norm(specs: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    push(specs, format!("{prefix}.weight"), &[dim], Init::Ones);
    push(specs, format!("{prefix}.bias"), &[dim], Init::Zeros);
}

fn push_conv(specs: &mut Vec<ParamSpec>, prefix: &str, out: usize, inp: usize, k: usize) {
    push(specs, format!("{prefix}.weight"), &[out, inp, k, k], Init::FanIn);
    push(specs, format!("{prefix}.bias"), &[out], Init::Zeros);
}

fn push_block(specs: &mut Vec<ParamSpec>, prefix: &str, dim: usize, hidden: usize) {
    push_norm(specs, &format!("{prefix}.norm1"), dim);
    push_linear(specs, &format!("{prefix}.attn.qkv"), 3 * dim, dim);
    push_linear(specs, &format!("{prefix}.attn.proj"), dim, dim);
    push_norm(specs, &format!("{prefix}.norm2"), dim);
    push_linear(specs, &format!("{prefix}.fc1"), hidden, dim);
    push_linear(specs, &format!("{prefix}.fc2"), dim, hidden);
}

pub(crate) fn push_dense_head(specs: &mut Vec<ParamSpec>, cfg: &ModelConfig, kind: DenseKind) {
    let p = kind.prefix();
    let (c, s) = (cfg.head_channels, cfg.skip_channels);
    for i in 0..cfg.taps.len() {
        push_linear(specs, &format!("{p}.proj.{i}"), c, cfg.dim);
    }
    push_conv(specs, &format!("{p}.fuse"), c, c, 3);
    push_conv(specs, &format!("{p}.skip"), s, 3, 3);
    push_conv(specs, &format!("{p}.refine1"), c, c + s, 3);
    push_conv(specs, &format!("{p}.refine2"), c, c, 3);
    push_conv(specs, &format!("{p}.out"), kind.channels(), c, 1);
    if kind.has_confidence() {
        push_conv(specs, &format!("{p}.conf"), 1, c, 1);
    }
}

/// Every parameter of the network, in initialization order.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.dim;
    let hidden = d * cfg.mlp_ratio;
    let p = cfg.patch_size;
    let mut s = Vec::new();
    push_linear(&mut s, "patch_embed", d, 3 * p * p);
    push(&mut s, "pos_embed".into(), &[cfg.num_patches(), d], Init::Normal(0.02));
    push(&mut s, "intrinsic_embed.weight".into(), &[d, 3], Init::Normal(0.02));
    push(&mut s, "intrinsic_embed.bias".into(), &[d], Init::Zeros);
    push(&mut s, "query_embed".into(), &[d], Init::Zeros);
    push(&mut s, "tokens.first".into(), &[1 + super::NUM_REGISTERS, d], Init::Normal(0.02));
    push(&mut s, "tokens.other".into(), &[1 + super::NUM_REGISTERS, d], Init::Normal(0.02));
    for k in 0..2 * cfg.block_pairs {
        push_block(&mut s, &format!("aggregator.{k}"), d, hidden);
    }
    for k in 0..cfg.camera_blocks {
        push_block(&mut s, &format!("camera_head.{k}"), d, hidden);
    }
    push_norm(&mut s, "camera_head.norm", d);
    push_linear(&mut s, "camera_head.out", super::CAMERA_DIM, d);
    push_dense_head(&mut s, cfg, DenseKind::Point);
    push_dense_head(&mut s, cfg, DenseKind::Depth);
    if cfg.motion_head {
        push_dense_head(&mut s, cfg, DenseKind::Motion);
    }
    s
}

/// Trainable parameters by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n: usize = spec.shape.iter().product();
            let fan_in: usize = spec.shape[1..].iter().product::<usize>().max(1);
            let data: Vec<f32> = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::FanIn => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-b..b) as f32).collect()
                }
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
                }
            };
            let t = Tensor::from_vec(data, spec.shape.as_slice(), &Device::Cpu)?;
            vars.insert(spec.name, Var::from_tensor(&t)?);
        }
        Ok(Self { vars })
    }

    pub fn from_arrays(cfg: &ModelConfig, arrays: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for spec in param_specs(cfg) {
            let (shape, data) = arrays
                .get(&spec.name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {}", spec.name)))?;
            if *shape != spec.shape {
                return Err(Error::ShapeMismatch(format!(
                    "{}: stored {:?}, expected {:?}",
                    spec.name, shape, spec.shape
                )));
            }
            let t = Tensor::from_vec(data.clone(), shape.as_slice(), &Device::Cpu)?;
            vars.insert(spec.name, Var::from_tensor(&t)?);
        }
        Ok(Self { vars })
    }

    pub fn to_arrays(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), (v.dims().to_vec(), v.flatten_all()?.to_vec1::<f32>()?))))
            .collect()
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_values(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites the values of `name`.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::ShapeMismatch(format!("{name}: {:?} vs {:?}", var.dims(), value.dims())));
        }
        var.set(value)?;
        Ok(())
    }

    /// Copies every parameter under `src.` onto the same-named one under `dst.`.
    pub fn copy_prefix(&self, src: &str, dst: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, var) in &self.vars {
            if let Some(rest) = name.strip_prefix(&format!("{dst}.")) {
                let source = self
                    .vars
                    .get(&format!("{src}.{rest}"))
                    .ok_or_else(|| Error::InvalidConfig(format!("{src}.{rest} has no counterpart")))?;
                var.set(&source.as_tensor().copy()?)?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Plain tensors that share storage with the variables (gradients flow).
    pub fn tracked(&self) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    /// Detached copies for evaluation.
    pub fn detached(&self) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().detach())).collect()
    }
}
