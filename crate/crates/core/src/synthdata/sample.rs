use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::{SceneLayout, Surface};
use super::SceneConfig;
use crate::error::{Error, Result};
use crate::geometry::{motion_field, project, DepthMap, Extrinsics, Intrinsics, MotionMap, PointMap, Vec3};

/// Linear RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn get(&self, i: usize, j: usize) -> [f32; 3] {
        self.data[j * self.width + i]
    }

    /// Bilinear lookup at a real-valued pixel position, clamped to the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(self.width - 1), (j0 + 1).min(self.height - 1));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let mut out = [0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(i0, j0)[c] as f64 * (1.0 - fu) + self.get(i1, j0)[c] as f64 * fu;
            let bottom = self.get(i0, j1)[c] as f64 * (1.0 - fu) + self.get(i1, j1)[c] as f64 * fu;
            *o = (top * (1.0 - fv) + bottom * fv) as f32;
        }
        out
    }
}

/// The object and object-frame coordinates a pixel's ray hits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub surface: Surface,
    pub local: Vec3,
    pub world: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Scene time of this frame, in frames since the start of the scene.
    pub time: f64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub hits: Vec<Option<SurfaceHit>>,
}

/// A sampled surface point followed through the whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTrack {
    pub surface: Surface,
    pub local: Vec3,
    /// World position per frame.
    pub positions: Vec<Vec3>,
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub config: SceneConfig,
    pub layout: SceneLayout,
    pub frames: Vec<Frame>,
    /// Per-frame pointmaps at their own time, in frame 0's camera coordinates.
    pub gt_pointmaps: Vec<PointMap>,
    pub vertex_tracks: Vec<VertexTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseTarget {
    pub pixel: (usize, usize),
    pub displacement: Vec3,
    pub depth: f64,
}

/// Generates a scene with exact ground truth. Deterministic in `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = SceneLayout::random(cfg, &mut rng)?;
    SceneSample::from_layout(cfg.clone(), layout)
}

/// Ray-casts one frame: returns the image, depth map and per-pixel hits.
pub fn render_frame(
    layout: &SceneLayout,
    time: f64,
    k: &Intrinsics,
    e: &Extrinsics,
) -> Result<(RgbImage, DepthMap, Vec<Option<SurfaceHit>>)> {
    let (w, h) = (k.width, k.height);
    let eye = e.camera_center();
    let rt = e.rotation.transpose();
    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut hits = vec![None; w * h];
    for j in 0..h {
        for i in 0..w {
            let idx = j * w + i;
            let dir_cam = Vec3::new((i as f64 - k.px) / k.fx, (j as f64 - k.py) / k.fy, 1.0);
            let dir = rt * dir_cam;
            match layout.cast(&eye, &dir, time) {
                Some(hit) => {
                    let world = eye + dir * hit.t;
                    let local = layout.to_local(hit.surface, &world, time);
                    depth[idx] = hit.t;
                    valid[idx] = true;
                    hits[idx] = Some(SurfaceHit {
                        surface: hit.surface,
                        local,
                        world,
                    });
                    rgb.push(shade(layout, hit.surface, &world, &local, time));
                }
                None => rgb.push(sky(j, h)),
            }
        }
    }
    Ok((
        RgbImage {
            width: w,
            height: h,
            data: rgb,
        },
        DepthMap::new(w, h, depth, valid)?,
        hits,
    ))
}

fn sky(j: usize, h: usize) -> [f32; 3] {
    let t = j as f32 / h.max(1) as f32;
    [0.55 + 0.2 * t, 0.7 + 0.15 * t, 0.95]
}

fn shade(layout: &SceneLayout, surface: Surface, world: &Vec3, local: &Vec3, time: f64) -> [f32; 3] {
    let light = Vec3::new(-0.4, 1.0, -0.6).normalize();
    let lambert = layout.normal(surface, world, time).dot(&light).max(0.0);
    let intensity = 0.35 + 0.65 * lambert;
    let albedo = match surface {
        Surface::Plane => {
            let cell = ((local.x / 0.5).floor() + (local.z / 0.5).floor()) as i64;
            if cell.rem_euclid(2) == 0 {
                [0.8, 0.8, 0.75]
            } else {
                [0.35, 0.35, 0.4]
            }
        }
        Surface::Sphere(k) => {
            let n = local.normalize();
            let lon = n.z.atan2(n.x);
            let lat = n.y.clamp(-1.0, 1.0).asin();
            let cell = ((lon / (std::f64::consts::PI / 4.0)).floor() + (lat / (std::f64::consts::PI / 4.0)).floor()) as i64;
            let c = layout.spheres[k].color;
            let f = if cell.rem_euclid(2) == 0 { 1.0 } else { 0.55 };
            [c[0] * f, c[1] * f, c[2] * f]
        }
    };
    [
        (albedo[0] * intensity).clamp(0.0, 1.0) as f32,
        (albedo[1] * intensity).clamp(0.0, 1.0) as f32,
        (albedo[2] * intensity).clamp(0.0, 1.0) as f32,
    ]
}

fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * k as f64;
            Vec3::new(r * theta.cos(), y, r * theta.sin()) * radius
        })
        .collect()
}

impl SceneSample {
    /// Renders every frame of `cfg` for a fixed layout.
    pub fn from_layout(cfg: SceneConfig, layout: SceneLayout) -> Result<Self> {
        cfg.validate()?;
        let fx = Intrinsics::focal_from_fov(cfg.fov_deg.to_radians(), cfg.width);
        let k = Intrinsics::centered(fx, fx, cfg.width, cfg.height)?;
        let cameras = (0..cfg.num_frames)
            .map(|f| Ok((f as f64, k, layout.rig.extrinsics_at(f as f64)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sample = Self::render(cfg, layout, &cameras)?;
        sample.vertex_tracks = sample.build_vertex_tracks();
        Ok(sample)
    }

    /// Renders frames for explicit `(time, intrinsics, extrinsics)` cameras;
    /// vertex tracks are left empty.
    pub fn render(cfg: SceneConfig, layout: SceneLayout, cameras: &[(f64, Intrinsics, Extrinsics)]) -> Result<Self> {
        let frames = cameras
            .iter()
            .map(|(time, k, e)| {
                let (rgb, depth, hits) = render_frame(&layout, *time, k, e)?;
                Ok(Frame {
                    time: *time,
                    rgb,
                    depth,
                    intrinsics: *k,
                    extrinsics: *e,
                    hits,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sample = Self {
            config: cfg,
            layout,
            frames,
            gt_pointmaps: Vec::new(),
            vertex_tracks: Vec::new(),
        };
        sample.gt_pointmaps = (0..sample.frames.len())
            .map(|t| sample.pointmap_at(t, t))
            .collect::<Result<_>>()?;
        Ok(sample)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn width(&self) -> usize {
        self.frames[0].intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.frames[0].intrinsics.height
    }

    fn check_frame(&self, f: usize) -> Result<()> {
        if f >= self.frames.len() {
            return Err(Error::IndexOutOfRange {
                index: f,
                len: self.frames.len(),
            });
        }
        Ok(())
    }

    /// `1X^t_q`: positions at the time of frame `q` of the points seen by frame
    /// `t`'s pixels, in frame 0's camera coordinates.
    pub fn pointmap_at(&self, t: usize, q: usize) -> Result<PointMap> {
        self.check_frame(t)?;
        self.check_frame(q)?;
        let reference = &self.frames[0].extrinsics;
        let time_q = self.frames[q].time;
        let frame = &self.frames[t];
        let mut data = Vec::with_capacity(frame.hits.len());
        let mut valid = Vec::with_capacity(frame.hits.len());
        for hit in &frame.hits {
            match hit {
                Some(h) => {
                    let world = if t == q {
                        h.world
                    } else {
                        self.layout.surface_point(h.surface, &h.local, time_q)
                    };
                    data.push(reference.world_to_camera(&world));
                    valid.push(true);
                }
                None => {
                    data.push(Vec3::zeros());
                    valid.push(false);
                }
            }
        }
        PointMap::new(self.width(), self.height(), data, valid, t, q, 0)
    }

    /// Dense motion target `1M^t_q`. Pixels whose surface point is occluded or
    /// outside the frustum of frame `q` are masked out.
    pub fn make_motion_target(&self, t: usize, q: usize) -> Result<MotionMap> {
        self.check_frame(t)?;
        self.check_frame(q)?;
        let frame = &self.frames[t];
        let (w, h) = (self.width(), self.height());
        if t == q {
            return Ok(MotionMap::zeros(w, h, frame.depth.valid.clone(), t, q));
        }
        let x_q = self.pointmap_at(t, q)?;
        let mut motion = motion_field(&x_q, &self.gt_pointmaps[t])?;
        let query = &self.frames[q];
        for (idx, hit) in frame.hits.iter().enumerate() {
            let visible = hit.is_some_and(|h| {
                let p = self.layout.surface_point(h.surface, &h.local, query.time);
                self.layout
                    .is_visible(&p, query.time, &query.intrinsics, &query.extrinsics)
            });
            if !visible {
                motion.valid[idx] = false;
                motion.data[idx] = Vec3::zeros();
            }
        }
        Ok(motion)
    }

    pub fn cameras(&self) -> Vec<(Intrinsics, Extrinsics)> {
        self.frames.iter().map(|f| (f.intrinsics, f.extrinsics)).collect()
    }

    fn build_vertex_tracks(&self) -> Vec<VertexTrack> {
        let mut seeds: Vec<(Surface, Vec3)> = Vec::new();
        for (k, s) in self.layout.spheres.iter().enumerate() {
            seeds.extend(
                fibonacci_sphere(self.config.vertices_per_sphere, s.radius)
                    .into_iter()
                    .map(|p| (Surface::Sphere(k), p)),
            );
        }
        if self.layout.ground_plane {
            let n = self.config.plane_vertex_grid;
            let [ex, ez] = self.config.layout_extent;
            for a in 0..n {
                for b in 0..n {
                    let fa = if n > 1 { a as f64 / (n - 1) as f64 } else { 0.5 };
                    let fb = if n > 1 { b as f64 / (n - 1) as f64 } else { 0.5 };
                    let x = -2.0 * ex + 4.0 * ex * fa;
                    let z = -ez + 3.0 * ez * fb;
                    seeds.push((Surface::Plane, Vec3::new(x, 0.0, z)));
                }
            }
        }
        seeds
            .into_iter()
            .map(|(surface, local)| self.track_vertex(surface, local))
            .collect()
    }

    fn track_vertex(&self, surface: Surface, local: Vec3) -> VertexTrack {
        let positions: Vec<Vec3> = self
            .frames
            .iter()
            .map(|f| self.layout.surface_point(surface, &local, f.time))
            .collect();
        let visible = self
            .frames
            .iter()
            .zip(&positions)
            .map(|(f, p)| self.layout.is_visible(p, f.time, &f.intrinsics, &f.extrinsics))
            .collect();
        VertexTrack {
            surface,
            local,
            positions,
            visible,
        }
    }

    pub(crate) fn rebuild_vertex_tracks(&mut self) {
        self.vertex_tracks = self.build_vertex_tracks();
    }

    /// Recomputes vertex visibility against the current cameras.
    pub(crate) fn refresh_vertex_visibility(&mut self) {
        let tracks = std::mem::take(&mut self.vertex_tracks);
        self.vertex_tracks = tracks
            .into_iter()
            .map(|t| self.track_vertex(t.surface, t.local))
            .collect();
    }

    /// A sub-sequence; ground truth is re-expressed in the new first frame.
    pub fn select_frames(&self, indices: &[usize]) -> Result<SceneSample> {
        if indices.is_empty() {
            return Err(Error::Sampling("empty frame selection".into()));
        }
        for &f in indices {
            self.check_frame(f)?;
        }
        let frames: Vec<Frame> = indices.iter().map(|&f| self.frames[f].clone()).collect();
        let vertex_tracks = self
            .vertex_tracks
            .iter()
            .map(|t| VertexTrack {
                surface: t.surface,
                local: t.local,
                positions: indices.iter().map(|&f| t.positions[f]).collect(),
                visible: indices.iter().map(|&f| t.visible[f]).collect(),
            })
            .collect();
        let mut config = self.config.clone();
        config.num_frames = frames.len();
        let mut sample = SceneSample {
            config,
            layout: self.layout.clone(),
            frames,
            gt_pointmaps: Vec::new(),
            vertex_tracks,
        };
        sample.gt_pointmaps = (0..sample.frames.len())
            .map(|t| sample.pointmap_at(t, t))
            .collect::<Result<_>>()?;
        Ok(sample)
    }
}

/// Sparse motion supervision from vertex trajectories: each vertex visible in
/// both frames is projected into frame `t`, rounded to the nearest pixel and
/// assigned its displacement to time `q` in frame 0's coordinates. When several
/// vertices land on one pixel the one nearest the camera wins.
pub fn sparse_motion_targets(
    vertex_tracks: &[VertexTrack],
    cameras: &[(Intrinsics, Extrinsics)],
    t: usize,
    q: usize,
) -> Vec<SparseTarget> {
    let Some((_, reference)) = cameras.first() else {
        return Vec::new();
    };
    let (k, e) = &cameras[t];
    let mut best: std::collections::BTreeMap<(usize, usize), SparseTarget> = Default::default();
    for track in vertex_tracks {
        if !(track.visible[t] && track.visible[q]) {
            continue;
        }
        let pt = track.positions[t];
        let Ok(((u, v), depth)) = project(&e.world_to_camera(&pt), k) else {
            continue;
        };
        let Some(pixel) = round_pixel(u, v, k) else {
            continue;
        };
        let displacement = reference.rotation * (track.positions[q] - pt);
        let candidate = SparseTarget {
            pixel,
            displacement,
            depth,
        };
        best.entry(pixel)
            .and_modify(|cur| {
                if candidate.depth < cur.depth {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    best.into_values().collect()
}

/// Nearest integer pixel, rounding halves up; `None` outside the image.
pub fn round_pixel(u: f64, v: f64, k: &Intrinsics) -> Option<(usize, usize)> {
    let i = (u + 0.5).floor();
    let j = (v + 0.5).floor();
    if i < 0.0 || j < 0.0 || i >= k.width as f64 || j >= k.height as f64 {
        return None;
    }
    Some((i as usize, j as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{transform_pointmap, unproject};
    use crate::synthdata::scene::{CameraPath, CameraRig, Sphere};

    fn cfg(seed: u64) -> SceneConfig {
        SceneConfig {
            num_frames: 5,
            seed,
            ..SceneConfig::default()
        }
    }

    fn translating_sphere(velocity: Vec3, plane: bool) -> SceneSample {
        let layout = SceneLayout {
            spheres: vec![Sphere {
                center: Vec3::new(-0.3, 0.6, 1.0),
                velocity,
                radius: 0.6,
                spin: 0.0,
                color: [0.9, 0.3, 0.2],
            }],
            ground_plane: plane,
            rig: CameraRig {
                eye: Vec3::new(0.0, 1.2, -3.0),
                target: Vec3::new(0.0, 0.5, 1.0),
                path: CameraPath::Static,
            },
        };
        SceneSample::from_layout(
            SceneConfig {
                num_frames: 5,
                ..SceneConfig::default()
            },
            layout,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_scene(&cfg(11)).unwrap();
        let b = generate_scene(&cfg(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg(12)).unwrap();
        assert_ne!(a.layout, c.layout);
    }

    #[test]
    fn static_plane_scene_has_zero_motion_and_analytic_depth() {
        let c = SceneConfig {
            num_spheres: 0,
            camera: CameraPath::Static,
            ground_plane: true,
            num_frames: 3,
            ..SceneConfig::default()
        };
        let s = generate_scene(&c).unwrap();
        for t in 0..3 {
            for q in 0..3 {
                let m = s.make_motion_target(t, q).unwrap();
                assert!(m.data.iter().all(|d| *d == Vec3::zeros()));
            }
        }
        let f = &s.frames[0];
        let eye = f.extrinsics.camera_center();
        let rt = f.extrinsics.rotation.transpose();
        for j in 0..s.height() {
            for i in 0..s.width() {
                let idx = j * s.width() + i;
                let k = &f.intrinsics;
                let dir = rt * Vec3::new((i as f64 - k.px) / k.fx, (j as f64 - k.py) / k.fy, 1.0);
                let t_plane = -eye.y / dir.y;
                if dir.y < 0.0 {
                    assert!(f.depth.valid[idx]);
                    assert!((f.depth.data[idx] - t_plane).abs() < 1e-9);
                } else {
                    assert!(!f.depth.valid[idx]);
                }
            }
        }
    }

    #[test]
    fn translating_sphere_motion() {
        let s = translating_sphere(Vec3::new(0.1, 0.0, 0.0), true);
        let r0 = s.frames[0].extrinsics.rotation;
        for (t, q) in [(0, 3), (1, 4), (4, 2)] {
            let m = s.make_motion_target(t, q).unwrap();
            let expected = r0 * Vec3::new(0.1 * (q as f64 - t as f64), 0.0, 0.0);
            let mut checked = 0;
            for (idx, hit) in s.frames[t].hits.iter().enumerate() {
                match hit.map(|h| h.surface) {
                    Some(Surface::Sphere(0)) if m.valid[idx] => {
                        assert!((m.data[idx] - expected).norm() < 1e-9);
                        checked += 1;
                    }
                    Some(Surface::Plane) if m.valid[idx] => assert!(m.data[idx].norm() < 1e-12),
                    _ => {}
                }
            }
            assert!(checked > 20, "only {checked} sphere pixels checked");
        }
    }

    #[test]
    fn zero_offset_motion_is_zero_with_rendered_mask() {
        let s = generate_scene(&cfg(3)).unwrap();
        for t in 0..s.num_frames() {
            let m = s.make_motion_target(t, t).unwrap();
            assert_eq!(m.valid, s.frames[t].depth.valid);
            assert!(m.data.iter().all(|d| *d == Vec3::zeros()));
        }
    }

    #[test]
    fn sphere_leaving_frustum_is_masked() {
        let s = translating_sphere(Vec3::new(2.0, 0.0, 0.0), false);
        let m = s.make_motion_target(0, 4).unwrap();
        let sphere_pixels = s.frames[0].hits.iter().filter(|h| h.is_some()).count();
        assert!(sphere_pixels > 0);
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn unproject_consistency_and_antisymmetry() {
        let s = generate_scene(&cfg(7)).unwrap();
        let e0 = s.frames[0].extrinsics;
        for (t, f) in s.frames.iter().enumerate() {
            let cam = PointMap::from_depth(&f.depth, &f.intrinsics, t).unwrap();
            let in_first = transform_pointmap(&cam, &f.extrinsics, &e0, 0).unwrap();
            let gt = &s.gt_pointmaps[t];
            assert_eq!(in_first.valid, gt.valid);
            for (a, b) in in_first.data.iter().zip(&gt.data) {
                assert!((a - b).norm() < 1e-9);
            }
            for j in (0..s.height()).step_by(5) {
                for i in (0..s.width()).step_by(5) {
                    let idx = j * s.width() + i;
                    if f.depth.valid[idx] {
                        let p = unproject((i, j), f.depth.data[idx], &f.intrinsics).unwrap();
                        let world = f.extrinsics.camera_to_world(&p);
                        assert!((world - f.hits[idx].unwrap().world).norm() < 1e-9);
                    }
                }
            }
        }
        for t in 0..s.num_frames() {
            for q in 0..s.num_frames() {
                let a = motion_field(&s.pointmap_at(t, q).unwrap(), &s.pointmap_at(t, t).unwrap()).unwrap();
                let b = motion_field(&s.pointmap_at(t, t).unwrap(), &s.pointmap_at(t, q).unwrap()).unwrap();
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert_eq!(*x, -*y);
                }
                let target = s.make_motion_target(t, q).unwrap();
                for idx in 0..target.valid.len() {
                    if target.valid[idx] {
                        assert!((target.data[idx] - a.data[idx]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    /// Brute-force occlusion oracle: march the query camera's ray toward the
    /// moved point and test every object independently.
    fn oracle_visible(layout: &SceneLayout, p: &Vec3, time: f64, k: &Intrinsics, e: &Extrinsics) -> bool {
        let pc = e.world_to_camera(p);
        if pc.z <= 0.0 {
            return false;
        }
        let u = k.fx * pc.x / pc.z + k.px;
        let v = k.fy * pc.y / pc.z + k.py;
        if u < -0.5 || v < -0.5 || u >= k.width as f64 - 0.5 || v >= k.height as f64 - 0.5 {
            return false;
        }
        let eye = e.camera_center();
        let dist = (p - eye).norm();
        let dir = (p - eye) / dist;
        let mut nearest = f64::INFINITY;
        if layout.ground_plane && dir.y.abs() > 0.0 {
            let s = -eye.y / dir.y;
            if s > 1e-9 {
                nearest = nearest.min(s);
            }
        }
        for s in &layout.spheres {
            let c = s.center_at(time);
            let b = dir.dot(&(eye - c));
            let disc = b * b - ((eye - c).norm_squared() - s.radius * s.radius);
            if disc >= 0.0 {
                for root in [-b - disc.sqrt(), -b + disc.sqrt()] {
                    if root > 1e-9 {
                        nearest = nearest.min(root);
                        break;
                    }
                }
            }
        }
        // compare in depth units
        nearest * (pc.z / dist) >= pc.z - 1e-6
    }

    #[test]
    fn dense_mask_matches_occlusion_oracle() {
        for seed in [1u64, 2, 5] {
            let s = generate_scene(&SceneConfig {
                num_spheres: 4,
                camera: CameraPath::Orbit {
                    radians_per_frame: 0.08,
                },
                ..cfg(seed)
            })
            .unwrap();
            let (t, q) = (0, s.num_frames() - 1);
            let m = s.make_motion_target(t, q).unwrap();
            let fq = &s.frames[q];
            let mut disagreements = 0;
            for (idx, hit) in s.frames[t].hits.iter().enumerate() {
                let expected = hit.is_some_and(|h| {
                    let p = s.layout.surface_point(h.surface, &h.local, fq.time);
                    oracle_visible(&s.layout, &p, fq.time, &fq.intrinsics, &fq.extrinsics)
                });
                if expected != m.valid[idx] {
                    disagreements += 1;
                }
            }
            assert_eq!(disagreements, 0, "seed {seed}");
        }
    }

    #[test]
    fn rounding_rule() {
        let k = Intrinsics::centered(10.0, 10.0, 8, 8).unwrap();
        assert_eq!(round_pixel(3.4, 4.6, &k), Some((3, 5)));
        assert_eq!(round_pixel(-0.5, 0.0, &k), Some((0, 0)));
        assert_eq!(round_pixel(7.5, 0.0, &k), None);
    }

    #[test]
    fn sparse_omits_vertices_hidden_at_query() {
        let s = generate_scene(&cfg(4)).unwrap();
        let cams = s.cameras();
        let (t, q) = (0, 4);
        let targets = sparse_motion_targets(&s.vertex_tracks, &cams, t, q);
        let both = s
            .vertex_tracks
            .iter()
            .filter(|v| v.visible[t] && v.visible[q])
            .count();
        assert!(targets.len() <= both);
        let mut hidden = s.vertex_tracks.clone();
        for v in &mut hidden {
            v.visible[q] = false;
        }
        assert!(sparse_motion_targets(&hidden, &cams, t, q).is_empty());
    }

    #[test]
    fn sparse_collision_keeps_nearest() {
        let k = Intrinsics::centered(10.0, 10.0, 8, 8).unwrap();
        let e = Extrinsics::identity();
        let near = VertexTrack {
            surface: Surface::Plane,
            local: Vec3::zeros(),
            positions: vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.5)],
            visible: vec![true, true],
        };
        let far = VertexTrack {
            positions: vec![Vec3::new(0.0, 0.0, 3.0), Vec3::new(1.0, 0.0, 3.0)],
            ..near.clone()
        };
        let targets = sparse_motion_targets(&[far, near], &[(k, e), (k, e)], 0, 1);
        assert_eq!(targets.len(), 1);
        assert_eq!(targets[0].displacement, Vec3::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn dense_and_sparse_agree_on_rigid_translation() {
        let mut s = translating_sphere(Vec3::new(0.05, 0.0, 0.03), false);
        // no plane: nothing else can occlude the sphere
        s.refresh_vertex_visibility();
        let cams = s.cameras();
        let mut compared = 0;
        for q in 1..s.num_frames() {
            let dense = s.make_motion_target(0, q).unwrap();
            for target in sparse_motion_targets(&s.vertex_tracks, &cams, 0, q) {
                let idx = target.pixel.1 * s.width() + target.pixel.0;
                if dense.valid[idx] {
                    assert!((dense.data[idx] - target.displacement).norm() < 1e-6);
                    compared += 1;
                }
            }
        }
        assert!(compared > 10);
    }

    #[test]
    fn select_frames_reexpresses_in_new_first_frame() {
        let s = generate_scene(&SceneConfig {
            camera: CameraPath::Orbit {
                radians_per_frame: 0.1,
            },
            ..cfg(9)
        })
        .unwrap();
        let sub = s.select_frames(&[2, 4]).unwrap();
        assert_eq!(sub.num_frames(), 2);
        let e2 = s.frames[2].extrinsics;
        for (a, hit) in sub.gt_pointmaps[1].data.iter().zip(&s.frames[4].hits) {
            if let Some(h) = hit {
                assert!((a - e2.world_to_camera(&h.world)).norm() < 1e-12);
            }
        }
        assert!(s.select_frames(&[7]).is_err());
    }

    #[test]
    fn degenerate_layout_errors() {
        let c = SceneConfig {
            num_spheres: 1,
            radius_range: (20.0, 20.0),
            ..cfg(0)
        };
        assert!(matches!(generate_scene(&c), Err(Error::DegenerateScene { .. })));
    }
}
