//! Procedural dynamic scenes with analytically exact ground truth.
//!
//! Scenes are spheres (optionally spinning) translating over a ground plane,
//! ray-cast through a pinhole camera. Because every pixel's surface point is
//! known in object coordinates, pointmaps at any time, dense motion targets
//! and visibility are exact.

mod augment;
mod bundle;
mod sample;
mod sampler;
mod scene;

pub use augment::{augment, AugmentParams, AugmentationSpec};
pub use bundle::{
    load_bundle, read_array, read_manifest, write_array, write_bundle, ArrayHeader, BundleManifest, FrameRecord,
    MotionRecord, ARRAY_MAGIC,
};
pub use sample::{
    generate_scene, render_frame, round_pixel, sparse_motion_targets, Frame, RgbImage, SceneSample, SparseTarget,
    SurfaceHit, VertexTrack,
};
pub use sampler::{draw_sequence, sample_batch, Dataset, SequenceDraw, TrainingSequence};
pub use scene::{CameraPath, CameraRig, RayHit, SceneLayout, Sphere, Surface, VISIBILITY_SLACK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Image sides must be multiples of this.
    pub patch_size: usize,
    pub num_spheres: usize,
    pub radius_range: (f64, f64),
    /// Translation speed range, scene units per frame.
    pub speed_range: (f64, f64),
    /// Maximum spin magnitude, radians per frame.
    pub max_spin: f64,
    pub camera: CameraPath,
    pub camera_eye: [f64; 3],
    pub camera_target: [f64; 3],
    /// Half extents (x, z) of the region sphere centers are drawn from.
    pub layout_extent: [f64; 2],
    pub ground_plane: bool,
    /// Horizontal field of view.
    pub fov_deg: f64,
    pub seed: u64,
    pub vertices_per_sphere: usize,
    pub plane_vertex_grid: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_frames: 4,
            width: 32,
            height: 32,
            patch_size: 8,
            num_spheres: 2,
            radius_range: (0.35, 0.6),
            speed_range: (0.05, 0.15),
            max_spin: 0.05,
            camera: CameraPath::Static,
            camera_eye: [0.0, 1.6, -3.5],
            camera_target: [0.0, 0.4, 0.8],
            layout_extent: [1.2, 1.0],
            ground_plane: true,
            fov_deg: 60.0,
            seed: 0,
            vertices_per_sphere: 48,
            plane_vertex_grid: 6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(2..=16).contains(&self.num_frames) {
            return fail(format!("num_frames must be in 2..=16, got {}", self.num_frames));
        }
        if self.patch_size == 0 || self.width % self.patch_size != 0 || self.height % self.patch_size != 0 {
            return fail(format!(
                "image {}x{} is not a multiple of patch size {}",
                self.width, self.height, self.patch_size
            ));
        }
        if self.width == 0 || self.height == 0 {
            return fail("empty image".into());
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r1 >= r0) {
            return fail(format!("bad radius range {:?}", self.radius_range));
        }
        let (s0, s1) = self.speed_range;
        if !(s0 >= 0.0 && s1 >= s0) {
            return fail(format!("bad speed range {:?}", self.speed_range));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return fail(format!("bad field of view {}", self.fov_deg));
        }
        Ok(())
    }
}
