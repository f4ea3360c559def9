//! Pinhole camera geometry and pointmap algebra.
//!
//! Pixels are addressed as `(i, j)` with `i` the column and `j` the row.
//! Pixel centers sit at integer coordinates. Extrinsics map world points into
//! camera coordinates (`x_cam = R * x_world + t`). Everything here is `f64`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            px,
            py,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics whose principal point is the image center `((W-1)/2, (H-1)/2)`.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image".into()));
        }
        let px_ok = self.px >= 0.0 && self.px < self.width as f64;
        let py_ok = self.py >= 0.0 && self.py < self.height as f64;
        if !(px_ok && py_ok) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.px, self.py, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, 0.0, self.px, //
            0.0, self.fy, self.py, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Result<Mat3> {
        if !(self.fx.is_finite() && self.fy.is_finite()) || self.fx == 0.0 || self.fy == 0.0 {
            return Err(Error::DegenerateIntrinsics(format!(
                "fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.px / self.fx,
            0.0,
            1.0 / self.fy,
            -self.py / self.fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    /// Horizontal and vertical field of view in radians.
    pub fn fov(&self) -> (f64, f64) {
        (
            2.0 * (self.width as f64 / (2.0 * self.fx)).atan(),
            2.0 * (self.height as f64 / (2.0 * self.fy)).atan(),
        )
    }

    pub fn focal_from_fov(fov: f64, extent: usize) -> f64 {
        (extent as f64 / 2.0) / (fov / 2.0).tan()
    }

    pub fn contains_pixel(&self, i: usize, j: usize) -> bool {
        i < self.width && j < self.height
    }

    /// Whether a real-valued pixel position falls inside some pixel's footprint.
    pub fn in_frustum(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && u < self.width as f64 - 0.5 && v >= -0.5 && v < self.height as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl Extrinsics {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    /// The camera frame is x right, y down, z forward.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidConfig("look_at with eye == target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidConfig("look_at direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * eye))
    }

    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Mat3::identity()).abs().max();
        let det = (r.determinant() - 1.0).abs();
        if gram.is_nan() || det.is_nan() {
            f64::INFINITY
        } else {
            gram.max(det)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let res = self.orthonormality_residual();
        if res > ORTHONORMAL_TOL {
            return Err(Error::NonOrthonormalRotation(res));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pose of `self`'s camera relative to the `reference` camera: maps points
    /// expressed in the reference camera frame into this camera's frame.
    pub fn relative_to(&self, reference: &Extrinsics) -> Extrinsics {
        let rotation = self.rotation * reference.rotation.transpose();
        Extrinsics {
            rotation,
            translation: self.translation - rotation * reference.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Lifts pixel `(i, j)` at `depth` into camera coordinates: `K^-1 (i d, j d, d)`.
pub fn unproject(pixel: (usize, usize), depth: f64, k: &Intrinsics) -> Result<Vec3> {
    let (i, j) = pixel;
    if !k.contains_pixel(i, j) {
        return Err(Error::PixelOutOfBounds {
            i,
            j,
            width: k.width,
            height: k.height,
        });
    }
    unproject_subpixel(i as f64, j as f64, depth, k)
}

/// [`unproject`] for real-valued pixel positions, without bounds checks.
pub fn unproject_subpixel(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vec3> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let k_inv = k.inverse_matrix()?;
    Ok(k_inv * Vec3::new(u * depth, v * depth, depth))
}

/// Projects a camera-frame point to a real-valued pixel `(u, v)` and its depth.
pub fn project(point: &Vec3, k: &Intrinsics) -> Result<((f64, f64), f64)> {
    if !(point.z > 0.0) {
        return Err(Error::BehindCamera(point.z));
    }
    let h = k.matrix() * point;
    Ok(((h.x / h.z, h.y / h.z), point.z))
}

/// Dense `H x W` grid of 3D positions with a validity mask.
///
/// `source_frame` is the frame whose pixels index the grid, `time_frame` the
/// instant the positions refer to and `coord_frame` the camera whose
/// coordinates express them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub source_frame: usize,
    pub time_frame: usize,
    pub coord_frame: usize,
}

impl PointMap {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<Vec3>,
        valid: Vec<bool>,
        source_frame: usize,
        time_frame: usize,
        coord_frame: usize,
    ) -> Result<Self> {
        let n = width * height;
        if data.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "pointmap {}x{} needs {} entries, got data={} valid={}",
                width,
                height,
                n,
                data.len(),
                valid.len()
            )));
        }
        if data.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::ShapeMismatch("pointmap entries must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
            source_frame,
            time_frame,
            coord_frame,
        })
    }

    /// Unprojects a depth map into the camera frame of `frame`.
    pub fn from_depth(depth: &DepthMap, k: &Intrinsics, frame: usize) -> Result<Self> {
        if depth.width != k.width || depth.height != k.height {
            return Err(Error::ShapeMismatch(format!(
                "depth {}x{} vs intrinsics {}x{}",
                depth.width, depth.height, k.width, k.height
            )));
        }
        let mut data = vec![Vec3::zeros(); depth.width * depth.height];
        for j in 0..depth.height {
            for i in 0..depth.width {
                let idx = j * depth.width + i;
                if depth.valid[idx] {
                    data[idx] = unproject((i, j), depth.data[idx], k)?;
                }
            }
        }
        Self::new(
            depth.width,
            depth.height,
            data,
            depth.valid.clone(),
            frame,
            frame,
            frame,
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn get(&self, i: usize, j: usize) -> Option<Vec3> {
        let idx = self.index(i, j);
        self.valid[idx].then(|| self.data[idx])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if data.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "depth map {}x{} needs {} entries",
                width, height, n
            )));
        }
        for (d, v) in data.iter().zip(&valid) {
            if *v && !(d.is_finite() && *d > 0.0) {
                return Err(Error::NonPositiveDepth(*d));
            }
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }
}

/// Per-pixel displacement of frame `source_time`'s scene points from time
/// `source_time` to time `query_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub source_time: usize,
    pub query_time: usize,
}

impl MotionMap {
    pub fn zeros(width: usize, height: usize, valid: Vec<bool>, source_time: usize, query_time: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Vec3::zeros(); width * height],
            valid,
            source_time,
            query_time,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Re-expresses a pointmap given in `pose_src`'s camera frame in `pose_dst`'s
/// camera frame.
pub fn transform_pointmap(
    pm: &PointMap,
    pose_src: &Extrinsics,
    pose_dst: &Extrinsics,
    dst_frame: usize,
) -> Result<PointMap> {
    pose_src.validate()?;
    pose_dst.validate()?;
    let rel = pose_dst.relative_to(pose_src);
    let data = pm
        .data
        .iter()
        .zip(&pm.valid)
        .map(|(p, v)| if *v { rel.world_to_camera(p) } else { Vec3::zeros() })
        .collect();
    Ok(PointMap {
        data,
        coord_frame: dst_frame,
        ..pm.clone()
    })
}

/// `x_q - x_t` for two pointmaps of the same source pixels in the same frame.
pub fn motion_field(x_q: &PointMap, x_t: &PointMap) -> Result<MotionMap> {
    if x_q.width != x_t.width || x_q.height != x_t.height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x_q.width, x_q.height, x_t.width, x_t.height
        )));
    }
    if x_q.source_frame != x_t.source_frame || x_q.coord_frame != x_t.coord_frame {
        return Err(Error::FrameMismatch(format!(
            "source {} vs {}, coords {} vs {}",
            x_q.source_frame, x_t.source_frame, x_q.coord_frame, x_t.coord_frame
        )));
    }
    let valid: Vec<bool> = x_q.valid.iter().zip(&x_t.valid).map(|(a, b)| *a && *b).collect();
    let data = x_q
        .data
        .iter()
        .zip(&x_t.data)
        .zip(&valid)
        .map(|((a, b), v)| if *v { a - b } else { Vec3::zeros() })
        .collect();
    Ok(MotionMap {
        width: x_q.width,
        height: x_q.height,
        data,
        valid,
        source_time: x_t.time_frame,
        query_time: x_q.time_frame,
    })
}

/// Applies a homogeneous 4x4 transform to a point.
pub fn apply_homogeneous(m: &Matrix4<f64>, p: &Vec3) -> Vec3 {
    let h = m * Vector4::new(p.x, p.y, p.z, 1.0);
    Vec3::new(h.x / h.w, h.y / h.w, h.z / h.w)
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix, with `w >= 0`.
pub fn rotation_to_quaternion(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let mut out = [q.w, q.i, q.j, q.k];
    if out[0] < 0.0 {
        out.iter_mut().for_each(|c| *c = -*c);
    }
    out
}

pub fn quaternion_to_rotation(q: [f64; 4]) -> Mat3 {
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *uq.to_rotation_matrix().matrix()
}
