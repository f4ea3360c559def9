//! The 9-number camera encoding shared by the camera head and its targets:
//! unit quaternion (w, x, y, z), translation, horizontal and vertical field
//! of view in radians. Poses are relative to frame 0.

use crate::error::Result;
use crate::geometry::{quaternion_to_rotation, rotation_to_quaternion, Extrinsics, Intrinsics, Vec3};

pub const CAMERA_DIM: usize = 9;

pub fn encode_camera(k: &Intrinsics, e: &Extrinsics, reference: &Extrinsics) -> [f64; CAMERA_DIM] {
    let rel = e.relative_to(reference);
    let q = rotation_to_quaternion(&rel.rotation);
    let (fov_x, fov_y) = k.fov();
    let t = rel.translation;
    [q[0], q[1], q[2], q[3], t.x, t.y, t.z, fov_x, fov_y]
}

/// Decodes into a pose relative to frame 0 and centered intrinsics for a
/// `width x height` image.
pub fn decode_camera(g: &[f64; CAMERA_DIM], width: usize, height: usize) -> Result<(Extrinsics, Intrinsics)> {
    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]).sqrt();
    let q = [g[0] / n, g[1] / n, g[2] / n, g[3] / n];
    let e = Extrinsics::new(quaternion_to_rotation(q), Vec3::new(g[4], g[5], g[6]))?;
    let fx = Intrinsics::focal_from_fov(g[7], width);
    let fy = Intrinsics::focal_from_fov(g[8], height);
    Ok((e, Intrinsics::centered(fx, fy, width, height)?))
}
