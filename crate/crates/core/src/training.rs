//! Two-phase training: camera, depth and point supervision first, then the
//! query embedding and motion head on motion-bearing data.
//!
//! Every step draws one batch seed from the run's random stream; the sequence
//! draw and its augmentation derive from that seed alone, so a checkpoint that
//! stores the stream position resumes bit-exactly.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle::{DType, Device, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{camera_loss, motion_loss, total_loss, LossComponents, LossReport, LossWeights, MapTerms};
use crate::model::{encode_camera, Checkpoint, FrameBatch, ModelConfig, Network, ParamStore, CAMERA_DIM};
use crate::synthdata::{augment, generate_scene, sample_batch, AugmentationSpec, Dataset, SceneConfig, SceneSample};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0, then cosine decay to 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, base_lr: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::InvalidSchedule(format!("warmup {warmup} must be below total {total}")));
    }
    if step > total {
        return Err(Error::InvalidSchedule(format!("step {step} past total {total}")));
    }
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveLosses {
    pub camera: bool,
    pub depth: bool,
    pub point: bool,
    pub motion: bool,
    /// Confidence terms on the depth and point maps.
    pub map_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    /// Parameter-name prefixes; empty means every parameter not claimed by an
    /// earlier group.
    pub prefixes: Vec<String>,
    pub lr: f64,
}

impl ParamGroup {
    fn claims(&self, name: &str) -> bool {
        self.prefixes.is_empty() || self.prefixes.iter().any(|p| has_prefix(name, p))
    }
}

fn has_prefix(name: &str, prefix: &str) -> bool {
    name == prefix || name.strip_prefix(prefix).is_some_and(|r| r.starts_with('.'))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub phase: u8,
    pub losses: ActiveLosses,
    pub intrinsic_embedding: bool,
    pub query_embedding: bool,
    pub groups: Vec<ParamGroup>,
    /// Parameters neither read nor updated in this phase.
    pub frozen: Vec<String>,
    pub steps: usize,
    pub warmup: usize,
}

impl PhaseSpec {
    /// Index of the group that trains `name`, if any.
    pub fn group_of(&self, name: &str) -> Option<usize> {
        if self.frozen.iter().any(|p| has_prefix(name, p)) {
            return None;
        }
        self.groups.iter().position(|g| g.claims(name))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.groups.iter().find(|g| !(g.lr > 0.0 && g.lr.is_finite())) {
            return Err(Error::InvalidConfig(format!("group {} has learning rate {}", g.name, g.lr)));
        }
        if self.steps > 0 && self.warmup >= self.steps {
            return Err(Error::InvalidSchedule(format!(
                "phase {}: warmup {} must be below {} steps",
                self.phase, self.warmup, self.steps
            )));
        }
        Ok(())
    }

    /// Same spec with every learning rate multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for g in &mut self.groups {
            g.lr *= factor;
        }
        self
    }
}

fn group(name: &str, prefixes: &[&str], lr: f64) -> ParamGroup {
    ParamGroup {
        name: name.into(),
        prefixes: prefixes.iter().map(|s| s.to_string()).collect(),
        lr,
    }
}

/// Phase definition with the reference learning rates, 3000 steps and 100
/// warmup steps.
pub fn build_phase(phase: u8, cfg: &ModelConfig) -> Result<PhaseSpec> {
    cfg.validate()?;
    match phase {
        1 => Ok(PhaseSpec {
            phase,
            losses: ActiveLosses {
                camera: true,
                depth: true,
                point: true,
                motion: false,
                map_confidence: true,
            },
            intrinsic_embedding: cfg.intrinsic_embedding,
            query_embedding: false,
            groups: vec![group("intrinsic_embed", &["intrinsic_embed"], 5e-5), group("rest", &[], 5e-6)],
            frozen: vec!["query_embed".into(), "motion_head".into()],
            steps: 3000,
            warmup: 100,
        }),
        2 => {
            if !cfg.motion_head {
                return Err(Error::InvalidConfig("phase 2 needs a model with a motion head".into()));
            }
            Ok(PhaseSpec {
                phase,
                losses: ActiveLosses {
                    camera: true,
                    depth: true,
                    point: true,
                    motion: true,
                    map_confidence: true,
                },
                intrinsic_embedding: cfg.intrinsic_embedding,
                query_embedding: cfg.query_embedding,
                groups: vec![
                    group("motion", &["motion_head", "query_embed"], 1e-5),
                    group("rest", &[], 1e-6),
                ],
                frozen: vec![],
                steps: 3000,
                warmup: 100,
            })
        }
        p => Err(Error::UnknownPhase(p)),
    }
}

/// Supervision tensors for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceTargets {
    /// `[N, 3, H, W]` in frame 0's camera coordinates.
    pub points: Tensor,
    pub point_mask: Tensor,
    /// `[N, 1, H, W]`.
    pub depth: Tensor,
    pub depth_mask: Tensor,
    /// `[N, 9]`.
    pub camera: Tensor,
    /// Displacements to the query frame and their mask.
    pub motion: Option<(Tensor, Tensor)>,
}

fn vec_map(data: &[nalgebra::Vector3<f64>], valid: &[bool], h: usize, w: usize) -> (Vec<f32>, Vec<u8>) {
    let n = h * w;
    let mut out = vec![0f32; 3 * n];
    for (k, p) in data.iter().enumerate() {
        if valid[k] {
            for c in 0..3 {
                out[c * n + k] = p[c] as f32;
            }
        }
    }
    (out, valid.iter().map(|v| *v as u8).collect())
}

impl SequenceTargets {
    pub fn from_sample(sample: &SceneSample, query: Option<usize>) -> Result<Self> {
        let (n, w, h) = (sample.num_frames(), sample.width(), sample.height());
        let dev = Device::Cpu;
        let (mut pts, mut pmask, mut depth, mut dmask, mut cam) = (vec![], vec![], vec![], vec![], vec![]);
        let mut motion = query.map(|_| (Vec::new(), Vec::new()));
        let reference = sample.frames[0].extrinsics;
        for t in 0..n {
            let f = &sample.frames[t];
            let pm = sample.pointmap_at(t, t)?;
            let (p, m) = vec_map(&pm.data, &pm.valid, h, w);
            pts.extend(p);
            pmask.extend(m);
            depth.extend(
                f.depth
                    .data
                    .iter()
                    .zip(&f.depth.valid)
                    .map(|(d, v)| if *v { *d as f32 } else { 0.0 }),
            );
            dmask.extend(f.depth.valid.iter().map(|v| *v as u8));
            cam.extend(encode_camera(&f.intrinsics, &f.extrinsics, &reference).map(|v| v as f32));
            if let (Some(q), Some((md, mm))) = (query, motion.as_mut()) {
                let target = sample.make_motion_target(t, q)?;
                let (d, m) = vec_map(&target.data, &target.valid, h, w);
                md.extend(d);
                mm.extend(m);
            }
        }
        let motion = match motion {
            Some((d, m)) => Some((
                Tensor::from_vec(d, (n, 3, h, w), &dev)?,
                Tensor::from_vec(m, (n, 1, h, w), &dev)?,
            )),
            None => None,
        };
        Ok(Self {
            points: Tensor::from_vec(pts, (n, 3, h, w), &dev)?,
            point_mask: Tensor::from_vec(pmask, (n, 1, h, w), &dev)?,
            depth: Tensor::from_vec(depth, (n, 1, h, w), &dev)?,
            depth_mask: Tensor::from_vec(dmask, (n, 1, h, w), &dev)?,
            camera: Tensor::from_vec(cam, (n, CAMERA_DIM), &dev)?,
            motion,
        })
    }
}

/// Forward pass and phase-active loss on one sequence.
pub fn sequence_loss(
    net: &Network,
    sample: &SceneSample,
    query: usize,
    losses: &ActiveLosses,
    weights: &LossWeights,
) -> Result<(Tensor, LossReport)> {
    let batch = FrameBatch::from_sample(sample)?;
    let out = net.forward(&batch, losses.motion.then_some(query))?;
    let targets = SequenceTargets::from_sample(sample, losses.motion.then_some(query))?;
    let a = weights.alpha;
    let c = losses.map_confidence;
    let mut comps = LossComponents::default();
    if losses.camera {
        comps.camera = Some(camera_loss(&out.camera, &targets.camera, weights.huber_eps)?);
    }
    if losses.depth {
        comps.depth = Some(MapTerms::compute(&out.depth, &targets.depth, &out.depth_conf, &targets.depth_mask, a, c)?);
    }
    if losses.point {
        comps.point = Some(MapTerms::compute(&out.points, &targets.points, &out.point_conf, &targets.point_mask, a, c)?);
    }
    if losses.motion {
        let (m, mask) = targets.motion.as_ref().expect("motion targets built with a query");
        let pred = out
            .motion
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model has no motion head".into()))?;
        let count = mask.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()? as usize;
        comps.motion = Some((motion_loss(pred, m, mask)?, count));
    }
    total_loss(&comps, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub steps: usize,
    pub warmup: usize,
    /// Multiplies every reference learning rate of the phase.
    pub lr_scale: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            warmup: 100,
            lr_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub name: String,
    pub num_scenes: usize,
    /// Scene `i` uses seed `seed + i`.
    pub seed: u64,
    pub scene: SceneConfig,
    pub weight: f64,
    pub stride_range: (usize, usize),
    pub length_range: (usize, usize),
    pub has_motion: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "spheres".into(),
            num_scenes: 8,
            seed: 0,
            scene: SceneConfig::default(),
            weight: 1.0,
            stride_range: (1, 1),
            length_range: (2, 4),
            has_motion: true,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        let scenes = (0..self.num_scenes as u64)
            .map(|i| {
                generate_scene(&SceneConfig {
                    seed: self.seed + i,
                    ..self.scene.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut d = Dataset::new(self.name.clone(), scenes);
        d.weight = self.weight;
        d.stride_range = self.stride_range;
        d.length_range = self.length_range;
        d.has_motion = self.has_motion;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    /// Single-worker, in-order sampling. Data loading is always in-process,
    /// so this only documents the guarantee in the manifest.
    pub deterministic: bool,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub augmentation: AugmentationSpec,
    pub datasets: Vec<DatasetConfig>,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_seed: 0,
            deterministic: true,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            augmentation: AugmentationSpec::default(),
            datasets: vec![DatasetConfig::default()],
            phase1: PhaseConfig::default(),
            phase2: PhaseConfig::default(),
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augmentation.validate()?;
        for d in &self.datasets {
            d.scene.validate()?;
            if d.scene.width != self.model.image_width || d.scene.height != self.model.image_height {
                return Err(Error::InvalidConfig(format!(
                    "dataset {} renders {}x{}, model expects {}x{}",
                    d.name, d.scene.width, d.scene.height, self.model.image_width, self.model.image_height
                )));
            }
        }
        for p in [1, 2] {
            self.phase(p)?.validate()?;
        }
        Ok(())
    }

    pub fn phase(&self, phase: u8) -> Result<PhaseSpec> {
        let pc = match phase {
            1 => &self.phase1,
            2 => &self.phase2,
            p => return Err(Error::UnknownPhase(p)),
        };
        let mut spec = build_phase(phase, &self.model)?.scaled(pc.lr_scale);
        spec.steps = pc.steps;
        spec.warmup = pc.warmup;
        Ok(spec)
    }

    pub fn build_datasets(&self) -> Result<Vec<Dataset>> {
        self.datasets.iter().map(DatasetConfig::build).collect()
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Steps taken over all phases.
    pub step: usize,
    pub phase: u8,
    pub phase_step: usize,
    pub rng_seed: u64,
    /// Word position of the batch-seed stream, as a decimal string.
    pub rng_word_pos: String,
    /// Exponential moving averages of the logged loss terms.
    pub running: BTreeMap<String, f64>,
}

const RUNNING_DECAY: f64 = 0.98;

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: u8,
    pub phase_step: usize,
    pub batch_seed: u64,
    pub query: usize,
    pub frames: usize,
    pub lr: BTreeMap<String, f64>,
    pub loss: BTreeMap<String, f64>,
}

struct Adam {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: usize,
}

impl Adam {
    fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    fn step(&mut self, store: &ParamStore, grads: &candle::backprop::GradStore, lrs: &BTreeMap<String, f64>) -> Result<()> {
        self.t += 1;
        let (b1, b2) = ADAM_BETAS;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, var) in store.vars() {
            let Some(&lr) = lrs.get(name) else { continue };
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // moments outlive the step; keep them free of the autograd graph
            let g = &g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * b1)? + (g * (1.0 - b1))?)?,
                None => (g * (1.0 - b1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + ADAM_EPS)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }
}

/// Output location of a run; `None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    datasets: Vec<Dataset>,
    motion_datasets: Vec<Dataset>,
    adam: Adam,
    rng: ChaCha8Rng,
    state: TrainState,
    out: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let datasets = cfg.build_datasets()?;
        Self::with_datasets(cfg, datasets)
    }

    pub fn with_datasets(cfg: TrainConfig, datasets: Vec<Dataset>) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::init(&cfg.model, cfg.init_seed)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = TrainState {
            step: 0,
            phase: 1,
            phase_step: 0,
            rng_seed: cfg.seed,
            rng_word_pos: "0".into(),
            running: BTreeMap::new(),
        };
        let motion_datasets = datasets.iter().filter(|d| d.has_motion).cloned().collect();
        Ok(Self {
            cfg,
            store,
            datasets,
            motion_datasets,
            adam: Adam::new(),
            rng,
            state,
            out: None,
            log: None,
        })
    }

    /// Writes checkpoints and the loss log under `dir`; the log is appended to.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let f = OpenOptions::new().create(true).append(true).open(dir.join("loss.jsonl"))?;
        self.log = Some(BufWriter::new(f));
        self.out = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.phase1.steps + self.cfg.phase2.steps
    }

    pub fn finished(&self) -> bool {
        match self.state.phase {
            1 => self.cfg.phase2.steps == 0 && self.state.phase_step >= self.cfg.phase1.steps,
            _ => self.state.phase_step >= self.cfg.phase2.steps,
        }
    }

    /// Switches to phase 2: the motion head starts as a copy of the point
    /// head and optimizer moments restart.
    fn enter_phase_two(&mut self) -> Result<()> {
        self.store.copy_prefix("point_head", "motion_head")?;
        self.adam = Adam::new();
        self.state.phase = 2;
        self.state.phase_step = 0;
        Ok(())
    }

    /// Runs one optimizer step, entering phase 2 first when phase 1 is done.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.state.phase == 1 && self.state.phase_step >= self.cfg.phase1.steps {
            self.enter_phase_two()?;
        }
        if self.finished() {
            return Err(Error::InvalidSchedule("training already finished".into()));
        }
        let spec = self.cfg.phase(self.state.phase)?;
        let batch_seed = self.rng.next_u64();
        let mut brng = ChaCha8Rng::seed_from_u64(batch_seed);
        let pool = if spec.losses.motion { &self.motion_datasets } else { &self.datasets };
        let seq = sample_batch(pool, &mut brng)?;
        let sample = augment(&seq.sample, &self.cfg.augmentation, brng.next_u64())?;

        let net = Network::new(&self.cfg.model, &self.store)?;
        let (loss, report) = sequence_loss(&net, &sample, seq.draw.query, &spec.losses, &self.cfg.loss)?;
        if !report.total.is_finite() {
            self.dump_nonfinite(batch_seed, &seq.draw)?;
            return Err(Error::NonFiniteLoss {
                step: self.state.step,
                batch_seed,
            });
        }
        let grads = loss.backward()?;
        let mut lrs = BTreeMap::new();
        let mut group_lr = BTreeMap::new();
        for g in &spec.groups {
            let lr = lr_schedule(self.state.phase_step + 1, spec.warmup, spec.steps, g.lr)?;
            group_lr.insert(g.name.clone(), lr);
        }
        for name in self.store.vars().keys() {
            if let Some(gi) = spec.group_of(name) {
                lrs.insert(name.clone(), group_lr[&spec.groups[gi].name]);
            }
        }
        self.adam.step(&self.store, &grads, &lrs)?;

        let record = StepRecord {
            step: self.state.step,
            phase: self.state.phase,
            phase_step: self.state.phase_step,
            batch_seed,
            query: seq.draw.query,
            frames: sample.num_frames(),
            lr: group_lr,
            loss: report.to_record(),
        };
        for (k, v) in &record.loss {
            let r = self.state.running.entry(k.clone()).or_insert(*v);
            *r = RUNNING_DECAY * *r + (1.0 - RUNNING_DECAY) * v;
        }
        self.state.step += 1;
        self.state.phase_step += 1;
        self.state.rng_word_pos = self.rng.get_word_pos().to_string();
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, &record)?;
            writeln!(log)?;
        }
        if let Some(dir) = &self.out {
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.state.step % every == 0 {
                self.checkpoint()?.save(&dir.join(format!("step_{:06}.dtck", self.state.step)))?;
            }
            if self.state.phase == 1 && self.state.phase_step == self.cfg.phase1.steps {
                self.checkpoint()?.save(&dir.join("phase1.dtck"))?;
            }
        }
        Ok(record)
    }

    /// Runs until both phases are done or `max_steps` more steps were taken.
    pub fn run(&mut self, max_steps: Option<usize>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while !self.finished() && max_steps.is_none_or(|m| records.len() < m) {
            records.push(self.step()?);
        }
        // a run with an empty phase 2 still ends with the copied motion head
        if self.state.phase == 1 && self.state.phase_step >= self.cfg.phase1.steps && self.cfg.phase2.steps == 0 {
            self.enter_phase_two()?;
        }
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        if self.finished() {
            if let Some(dir) = &self.out {
                self.checkpoint()?.save(&dir.join("final.dtck"))?;
            }
        }
        Ok(records)
    }

    fn dump_nonfinite(&self, batch_seed: u64, draw: &crate::synthdata::SequenceDraw) -> Result<()> {
        log::error!("non-finite loss at step {} (batch seed {batch_seed})", self.state.step);
        if let Some(dir) = &self.out {
            let dump = serde_json::json!({
                "step": self.state.step,
                "phase": self.state.phase,
                "batch_seed": batch_seed,
                "draw": draw,
            });
            fs::write(dir.join("nonfinite.json"), serde_json::to_vec_pretty(&dump)?)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint {
            config: self.cfg.model.clone(),
            phase: self.state.phase,
            arrays: BTreeMap::new(),
            meta: serde_json::json!({
                "state": self.state,
                "adam_t": self.adam.t,
                "train_config": self.cfg,
            }),
        };
        ck.insert_group("param", self.store.to_arrays()?);
        for (prefix, moments) in [("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            let arrays = moments
                .iter()
                .map(|(k, t)| Ok((k.clone(), (t.dims().to_vec(), t.flatten_all()?.to_vec1::<f32>()?))))
                .collect::<Result<BTreeMap<_, _>>>()?;
            ck.insert_group(prefix, arrays);
        }
        Ok(ck)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, datasets: Vec<Dataset>) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta.get(k).cloned().ok_or_else(|| Error::Checkpoint {
                path: PathBuf::new(),
                reason: format!("metadata lacks {k}"),
            })
        };
        let cfg: TrainConfig = serde_json::from_value(meta("train_config")?)?;
        let state: TrainState = serde_json::from_value(meta("state")?)?;
        let adam_t: usize = serde_json::from_value(meta("adam_t")?)?;
        let mut t = Self::with_datasets(cfg, datasets)?;
        t.store = ParamStore::from_arrays(&t.cfg.model, &ck.group("param"))?;
        let load = |prefix: &str| -> Result<BTreeMap<String, Tensor>> {
            ck.group(prefix)
                .into_iter()
                .map(|(k, (shape, data))| Ok((k, Tensor::from_vec(data, shape, &Device::Cpu)?)))
                .collect()
        };
        t.adam = Adam {
            m: load("adam.m")?,
            v: load("adam.v")?,
            t: adam_t,
        };
        let pos: u128 = state.rng_word_pos.parse().map_err(|_| Error::Checkpoint {
            path: PathBuf::new(),
            reason: format!("bad stream position {}", state.rng_word_pos),
        })?;
        t.rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        t.rng.set_word_pos(pos);
        t.state = state;
        Ok(t)
    }

    /// Network with detached weights for evaluation.
    pub fn network(&self) -> Result<Network> {
        Network::detached(&self.cfg.model, &self.store)
    }
}

/// Loads trained parameters from any checkpoint.
pub fn load_params(ck: &Checkpoint) -> Result<ParamStore> {
    ParamStore::from_arrays(&ck.config, &ck.group("param"))
}
