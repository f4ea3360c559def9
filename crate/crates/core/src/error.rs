use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate intrinsics: {0}")]
    DegenerateIntrinsics(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth must be strictly positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({i}, {j}) outside {width}x{height} image")]
    PixelOutOfBounds {
        i: usize,
        j: usize,
        width: usize,
        height: usize,
    },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("rotation is not orthonormal with det +1 (residual {0:.3e})")]
    NonOrthonormalRotation(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed after {attempts} attempts: {reason}")]
    DegenerateScene { attempts: usize, reason: String },
    #[error("augmentation produced a degenerate crop: {0}")]
    DegenerateCrop(String),
    #[error("no sequence can be sampled: {0}")]
    Sampling(String),
    #[error("uncertainty map must be strictly positive on supervised pixels (minimum {0})")]
    NonPositiveUncertainty(f64),
    #[error("degenerate prediction: median predicted norm is zero")]
    DegeneratePrediction,
    #[error("empty track set")]
    EmptyTracks,
    #[error("unknown training phase {0}")]
    UnknownPhase(u8),
    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    NonFiniteLoss { step: usize, batch_seed: u64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("checkpoint format error in {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("bundle format error in {path}: {reason}")]
    Bundle { path: PathBuf, reason: String },
    #[error("run directory {0} already contains a manifest")]
    ManifestExists(PathBuf),
    #[error(transparent)]
    Tensor(#[from] candle::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
