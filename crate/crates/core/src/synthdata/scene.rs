//! Analytic scene description: spheres on an optional ground plane, moving
//! rigidly, observed by a pinhole camera following a simple path.

use nalgebra::Rotation3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneConfig;
use crate::error::{Error, Result};
use crate::geometry::{project, Extrinsics, Intrinsics, Vec3};

/// Occlusion slack when comparing a re-cast hit depth with a point's depth.
pub const VISIBILITY_SLACK: f64 = 1e-6;
const MIN_HIT_DISTANCE: f64 = 1e-9;
const CAMERA_CLEARANCE: f64 = 0.05;
const MAX_LAYOUT_ATTEMPTS: usize = 10;

pub(crate) fn world_up() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Surface {
    Plane,
    Sphere(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    /// Center at time 0.
    pub center: Vec3,
    /// Translation per frame.
    pub velocity: Vec3,
    pub radius: f64,
    /// Rotation about the vertical axis through the center, radians per frame.
    pub spin: f64,
    pub color: [f64; 3],
}

impl Sphere {
    pub fn center_at(&self, time: f64) -> Vec3 {
        self.center + self.velocity * time
    }

    fn spin_at(&self, time: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), self.spin * time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    Static,
    /// Orbits the look-at target about the vertical axis.
    Orbit { radians_per_frame: f64 },
    /// Eye and target translate together.
    Linear { velocity: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub eye: Vec3,
    pub target: Vec3,
    pub path: CameraPath,
}

impl CameraRig {
    pub fn eye_at(&self, time: f64) -> Vec3 {
        match self.path {
            CameraPath::Static => self.eye,
            CameraPath::Orbit { radians_per_frame } => {
                let rot = Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), radians_per_frame * time);
                self.target + rot * (self.eye - self.target)
            }
            CameraPath::Linear { velocity } => self.eye + Vec3::from(velocity) * time,
        }
    }

    pub fn target_at(&self, time: f64) -> Vec3 {
        match self.path {
            CameraPath::Linear { velocity } => self.target + Vec3::from(velocity) * time,
            _ => self.target,
        }
    }

    pub fn extrinsics_at(&self, time: f64) -> Result<Extrinsics> {
        Extrinsics::look_at(self.eye_at(time), self.target_at(time), world_up())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub spheres: Vec<Sphere>,
    /// Ground plane `y = 0` when present.
    pub ground_plane: bool,
    pub rig: CameraRig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub surface: Surface,
    /// Ray parameter; equals camera depth when the ray direction has unit z in camera coordinates.
    pub t: f64,
}

impl SceneLayout {
    /// World position at `time` of the surface point with object-frame coordinates `local`.
    pub fn surface_point(&self, surface: Surface, local: &Vec3, time: f64) -> Vec3 {
        match surface {
            Surface::Plane => *local,
            Surface::Sphere(k) => {
                let s = &self.spheres[k];
                s.center_at(time) + s.spin_at(time) * local
            }
        }
    }

    /// Inverse of [`surface_point`](Self::surface_point).
    pub fn to_local(&self, surface: Surface, world: &Vec3, time: f64) -> Vec3 {
        match surface {
            Surface::Plane => *world,
            Surface::Sphere(k) => {
                let s = &self.spheres[k];
                s.spin_at(time).inverse() * (world - s.center_at(time))
            }
        }
    }

    pub fn normal(&self, surface: Surface, world: &Vec3, time: f64) -> Vec3 {
        match surface {
            Surface::Plane => world_up(),
            Surface::Sphere(k) => (world - self.spheres[k].center_at(time)).normalize(),
        }
    }

    /// Nearest intersection of `origin + t * dir` (t > 0) with the scene at `time`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, time: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut consider = |surface: Surface, t: f64| {
            if t > MIN_HIT_DISTANCE && best.is_none_or(|b| t < b.t) {
                best = Some(RayHit { surface, t });
            }
        };
        if self.ground_plane && dir.y != 0.0 {
            consider(Surface::Plane, -origin.y / dir.y);
        }
        let a = dir.norm_squared();
        for (k, s) in self.spheres.iter().enumerate() {
            let oc = origin - s.center_at(time);
            let half_b = dir.dot(&oc);
            let c = oc.norm_squared() - s.radius * s.radius;
            let disc = half_b * half_b - a * c;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let near = (-half_b - sq) / a;
            let far = (-half_b + sq) / a;
            if near > MIN_HIT_DISTANCE {
                consider(Surface::Sphere(k), near);
            } else {
                consider(Surface::Sphere(k), far);
            }
        }
        best
    }

    /// Whether world point `p` is seen by camera `(k, e)` at `time`: in front of
    /// the camera, inside the frustum and not occluded.
    pub fn is_visible(&self, p: &Vec3, time: f64, k: &Intrinsics, e: &Extrinsics) -> bool {
        let pc = e.world_to_camera(p);
        let Ok(((u, v), depth)) = project(&pc, k) else {
            return false;
        };
        if !k.in_frustum(u, v) {
            return false;
        }
        // direction scaled so the ray parameter is the camera depth
        let dir_world = e.rotation.transpose() * (pc / depth);
        match self.cast(&e.camera_center(), &dir_world, time) {
            Some(hit) => hit.t >= depth - VISIBILITY_SLACK,
            None => true,
        }
    }

    /// Whether the camera center lies inside (or too close to) any sphere at any of `times`.
    pub fn camera_collision(&self, times: &[f64]) -> Option<String> {
        for &t in times {
            let eye = self.rig.eye_at(t);
            for (k, s) in self.spheres.iter().enumerate() {
                if (eye - s.center_at(t)).norm() <= s.radius + CAMERA_CLEARANCE {
                    return Some(format!("camera inside sphere {k} at time {t}"));
                }
            }
            if self.ground_plane && eye.y <= CAMERA_CLEARANCE {
                return Some(format!("camera below ground plane at time {t}"));
            }
        }
        None
    }

    /// Draws a random layout for `cfg`, retrying with a jittered layout when the
    /// camera would sit inside an object.
    pub fn random(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Self> {
        let times: Vec<f64> = (0..cfg.num_frames).map(|f| f as f64).collect();
        let mut last_reason = String::new();
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let layout = Self::draw(cfg, rng);
            match layout.camera_collision(&times) {
                None => return Ok(layout),
                Some(reason) => last_reason = reason,
            }
        }
        Err(Error::DegenerateScene {
            attempts: MAX_LAYOUT_ATTEMPTS,
            reason: last_reason,
        })
    }

    fn draw(cfg: &SceneConfig, rng: &mut impl Rng) -> Self {
        let spheres = (0..cfg.num_spheres)
            .map(|_| {
                let radius = uniform(rng, cfg.radius_range);
                let y = if cfg.ground_plane {
                    radius
                } else {
                    rng.random_range(0.0..1.2)
                };
                let center = Vec3::new(
                    cfg.layout_extent[0] * rng.random_range(-1.0..1.0),
                    y,
                    cfg.layout_extent[1] * rng.random_range(-1.0..1.0),
                );
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                let speed = uniform(rng, cfg.speed_range);
                let velocity = Vec3::new(heading.cos(), 0.0, heading.sin()) * speed;
                let spin = cfg.max_spin * rng.random_range(-1.0..1.0);
                let color = [
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                ];
                Sphere {
                    center,
                    velocity,
                    radius,
                    spin,
                    color,
                }
            })
            .collect();
        let jitter = Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.3..0.3),
        );
        Self {
            spheres,
            ground_plane: cfg.ground_plane,
            rig: CameraRig {
                eye: Vec3::from(cfg.camera_eye) + jitter,
                target: Vec3::from(cfg.camera_target),
                path: cfg.camera,
            },
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sphere() -> SceneLayout {
        SceneLayout {
            spheres: vec![Sphere {
                center: Vec3::new(0.0, 0.5, 2.0),
                velocity: Vec3::new(0.1, 0.0, 0.0),
                radius: 0.5,
                spin: 0.2,
                color: [1.0, 0.0, 0.0],
            }],
            ground_plane: true,
            rig: CameraRig {
                eye: Vec3::new(0.0, 0.5, -2.0),
                target: Vec3::new(0.0, 0.5, 2.0),
                path: CameraPath::Static,
            },
        }
    }

    #[test]
    fn cast_hits_nearest_surface() {
        let layout = one_sphere();
        let hit = layout
            .cast(&Vec3::new(0.0, 0.5, -2.0), &Vec3::new(0.0, 0.0, 1.0), 0.0)
            .unwrap();
        assert_eq!(hit.surface, Surface::Sphere(0));
        assert!((hit.t - 3.5).abs() < 1e-12);
        let down = layout
            .cast(&Vec3::new(0.0, 0.5, -2.0), &Vec3::new(0.0, -1.0, 1.0), 0.0)
            .unwrap();
        assert_eq!(down.surface, Surface::Plane);
        assert!((down.t - 0.5).abs() < 1e-12);
        assert!(layout
            .cast(&Vec3::new(0.0, 0.5, -2.0), &Vec3::new(0.0, 1.0, 0.0), 0.0)
            .is_none());
    }

    #[test]
    fn local_coordinates_round_trip() {
        let layout = one_sphere();
        let world = Vec3::new(0.3, 0.9, 1.7);
        for time in [0.0, 1.0, 2.5] {
            let local = layout.to_local(Surface::Sphere(0), &world, time);
            let back = layout.surface_point(Surface::Sphere(0), &local, time);
            assert!((back - world).norm() < 1e-12);
        }
    }

    #[test]
    fn back_of_sphere_is_occluded() {
        let layout = one_sphere();
        let k = Intrinsics::centered(20.0, 20.0, 32, 32).unwrap();
        let e = layout.rig.extrinsics_at(0.0).unwrap();
        assert!(layout.is_visible(&Vec3::new(0.0, 0.5, 1.5), 0.0, &k, &e));
        assert!(!layout.is_visible(&Vec3::new(0.0, 0.5, 2.5), 0.0, &k, &e));
        // behind the camera
        assert!(!layout.is_visible(&Vec3::new(0.0, 0.5, -3.0), 0.0, &k, &e));
    }

    #[test]
    fn orbit_keeps_distance_to_target() {
        let rig = CameraRig {
            eye: Vec3::new(0.0, 1.5, -4.0),
            target: Vec3::new(0.0, 0.5, 0.0),
            path: CameraPath::Orbit {
                radians_per_frame: 0.1,
            },
        };
        let d0 = (rig.eye_at(0.0) - rig.target).norm();
        let d5 = (rig.eye_at(5.0) - rig.target).norm();
        assert!((d0 - d5).abs() < 1e-12);
        assert!((rig.eye_at(5.0) - rig.eye).norm() > 0.1);
    }

    #[test]
    fn collision_detected() {
        let mut layout = one_sphere();
        layout.rig.eye = Vec3::new(0.0, 0.5, 2.1);
        assert!(layout.camera_collision(&[0.0]).is_some());
        assert!(one_sphere().camera_collision(&[0.0, 1.0, 2.0]).is_none());
    }
}
