use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::SceneSample;
use crate::error::{Error, Result};

/// A pool of scenes sampled with a common weight, stride and length policy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub scenes: Vec<SceneSample>,
    /// Relative sampling frequency; pose-only datasets use one half.
    pub weight: f64,
    /// Inclusive frame stride range.
    pub stride_range: (usize, usize),
    /// Inclusive sequence length range.
    pub length_range: (usize, usize),
    /// Whether scenes carry motion supervision.
    pub has_motion: bool,
}

impl Dataset {
    pub fn new(name: impl Into<String>, scenes: Vec<SceneSample>) -> Self {
        Self {
            name: name.into(),
            scenes,
            weight: 1.0,
            stride_range: (1, 4),
            length_range: (2, 10),
            has_motion: true,
        }
    }
}

/// Indices of one drawn training sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDraw {
    pub dataset: usize,
    pub scene: usize,
    pub frames: Vec<usize>,
    pub stride: usize,
    /// Query index within `frames`.
    pub query: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub draw: SequenceDraw,
    pub sample: SceneSample,
}

const MAX_SCENE_REDRAWS: usize = 1000;

fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Draws dataset, scene, length, stride, start frame and query index.
///
/// The length is drawn first and kept; scenes too short for it are redrawn.
/// The stride is uniform over the strides in the dataset's range that fit the
/// chosen scene.
pub fn draw_sequence(datasets: &[Dataset], rng: &mut impl Rng) -> Result<SequenceDraw> {
    let weights: Vec<f64> = datasets
        .iter()
        .map(|d| if d.scenes.is_empty() { 0.0 } else { d.weight.max(0.0) })
        .collect();
    if weights.iter().all(|w| *w <= 0.0) {
        return Err(Error::Sampling("no non-empty dataset with positive weight".into()));
    }
    let dataset = pick_weighted(&weights, rng);
    let ds = &datasets[dataset];
    let (l0, l1) = ds.length_range;
    let (s0, s1) = ds.stride_range;
    if l0 < 1 || l1 < l0 || s0 < 1 || s1 < s0 {
        return Err(Error::InvalidConfig(format!(
            "dataset {}: bad length {:?} or stride {:?} range",
            ds.name, ds.length_range, ds.stride_range
        )));
    }
    let length = rng.random_range(l0..=l1);
    let min_span = (length - 1) * s0 + 1;
    if ds.scenes.iter().all(|s| s.num_frames() < min_span) {
        return Err(Error::Sampling(format!(
            "dataset {} has no scene with {} frames",
            ds.name, min_span
        )));
    }
    for _ in 0..MAX_SCENE_REDRAWS {
        let scene = rng.random_range(0..ds.scenes.len());
        let n = ds.scenes[scene].num_frames();
        if n < min_span {
            continue;
        }
        let max_stride = if length > 1 { ((n - 1) / (length - 1)).min(s1) } else { s1 };
        let stride = rng.random_range(s0..=max_stride);
        let span = (length - 1) * stride + 1;
        let start = rng.random_range(0..=n - span);
        let frames = (0..length).map(|k| start + k * stride).collect();
        let query = rng.random_range(0..length);
        return Ok(SequenceDraw {
            dataset,
            scene,
            frames,
            stride,
            query,
        });
    }
    Err(Error::Sampling(format!("could not fit length {length} in dataset {}", ds.name)))
}

/// Draws and materializes one training sequence.
pub fn sample_batch(datasets: &[Dataset], rng: &mut impl Rng) -> Result<TrainingSequence> {
    let draw = draw_sequence(datasets, rng)?;
    let sample = datasets[draw.dataset].scenes[draw.scene].select_frames(&draw.frames)?;
    Ok(TrainingSequence { draw, sample })
}
