//! Sequence-level augmentation: one set of crop and color parameters is drawn
//! per sequence and applied to every frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{render_frame, Frame, RgbImage, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    /// Jitter factors are drawn from `[1 - s, 1 + s]`.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Crop aspect multiplier range (width / height relative to the image); drawn log-uniformly.
    pub aspect_range: (f64, f64),
    /// Fraction of the image side kept by the center crop.
    pub crop_scale_range: (f64, f64),
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            aspect_range: (1.0, 1.0),
            crop_scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c0, c1) = self.crop_scale_range;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "crop scale range must lie in (0, 1], got {:?}",
                self.crop_scale_range
            )));
        }
        let (a0, a1) = self.aspect_range;
        if !(a0 > 0.0 && a0 <= a1) {
            return Err(Error::InvalidConfig(format!("bad aspect range {:?}", self.aspect_range)));
        }
        for s in [self.brightness, self.contrast, self.saturation] {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!("jitter strength {s} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub crop_scale: f64,
    pub aspect: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            crop_scale: 1.0,
            aspect: 1.0,
        }
    }

    pub fn draw(spec: &AugmentationSpec, rng: &mut impl Rng) -> Self {
        let mut factor = |s: f64| if s > 0.0 { rng.random_range(1.0 - s..=1.0 + s) } else { 1.0 };
        let brightness = factor(spec.brightness);
        let contrast = factor(spec.contrast);
        let saturation = factor(spec.saturation);
        let (c0, c1) = spec.crop_scale_range;
        let crop_scale = if c1 > c0 { rng.random_range(c0..=c1) } else { c0 };
        let (a0, a1) = spec.aspect_range;
        let aspect = if a1 > a0 {
            rng.random_range(a0.ln()..=a1.ln()).exp()
        } else {
            a0
        };
        Self {
            brightness,
            contrast,
            saturation,
            crop_scale,
            aspect,
        }
    }
}

/// Continuous pixel-coordinate map `u_src = a * u_dst + b` of a centered crop
/// of `kept` source pixels resized to `size` pixels.
fn crop_axis(size: usize, kept: f64) -> (f64, f64) {
    let a = kept / size as f64;
    let center = (size as f64 - 1.0) / 2.0;
    (a, center - kept / 2.0 + a / 2.0)
}

/// Augments a sequence; the same parameters apply to every frame.
pub fn augment(sample: &SceneSample, spec: &AugmentationSpec, seed: u64) -> Result<SceneSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams::draw(spec, &mut rng);
    apply(sample, &params)
}

pub(crate) fn apply(sample: &SceneSample, params: &AugmentParams) -> Result<SceneSample> {
    let (w, h) = (sample.width(), sample.height());
    let kept_w = (w as f64 * params.crop_scale * params.aspect.sqrt()).min(w as f64);
    let kept_h = (h as f64 * params.crop_scale / params.aspect.sqrt()).min(h as f64);
    if !(kept_w >= 1.0 && kept_h >= 1.0) {
        return Err(Error::DegenerateCrop(format!(
            "crop keeps {kept_w:.2}x{kept_h:.2} pixels of {w}x{h}"
        )));
    }
    let (ax, bx) = crop_axis(w, kept_w);
    let (ay, by) = crop_axis(h, kept_h);
    let cropped = !(ax == 1.0 && bx == 0.0 && ay == 1.0 && by == 0.0);

    let mut out = sample.clone();
    if cropped {
        for frame in &mut out.frames {
            let k = frame.intrinsics;
            let new_k = Intrinsics::new(k.fx / ax, k.fy / ay, (k.px - bx) / ax, (k.py - by) / ay, w, h)
                .map_err(|e| Error::DegenerateCrop(e.to_string()))?;
            let (_, depth, hits) = render_frame(&sample.layout, frame.time, &new_k, &frame.extrinsics)?;
            let data = (0..h)
                .flat_map(|j| (0..w).map(move |i| (i, j)))
                .map(|(i, j)| frame.rgb.sample_bilinear(ax * i as f64 + bx, ay * j as f64 + by))
                .collect();
            *frame = Frame {
                rgb: RgbImage {
                    width: w,
                    height: h,
                    data,
                },
                depth,
                intrinsics: new_k,
                hits,
                ..frame.clone()
            };
        }
        out.gt_pointmaps = (0..out.frames.len())
            .map(|t| out.pointmap_at(t, t))
            .collect::<Result<_>>()?;
        out.refresh_vertex_visibility();
    }
    for frame in &mut out.frames {
        jitter(&mut frame.rgb, params);
    }
    Ok(out)
}

fn luminance(c: &[f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn jitter(img: &mut RgbImage, p: &AugmentParams) {
    if p.brightness != 1.0 {
        let b = p.brightness as f32;
        img.data.iter_mut().flatten().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
    }
    if p.contrast != 1.0 {
        let c = p.contrast as f32;
        let mean = img.data.iter().map(luminance).sum::<f32>() / img.data.len() as f32;
        img.data
            .iter_mut()
            .flatten()
            .for_each(|v| *v = (mean + (*v - mean) * c).clamp(0.0, 1.0));
    }
    if p.saturation != 1.0 {
        let s = p.saturation as f32;
        for px in &mut img.data {
            let gray = luminance(px);
            px.iter_mut().for_each(|v| *v = (gray + (*v - gray) * s).clamp(0.0, 1.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{transform_pointmap, PointMap};
    use crate::synthdata::{generate_scene, SceneConfig};

    fn scene() -> SceneSample {
        generate_scene(&SceneConfig {
            num_frames: 3,
            seed: 21,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn assert_unproject_consistent(s: &SceneSample, tol: f64) {
        let e0 = s.frames[0].extrinsics;
        for (t, f) in s.frames.iter().enumerate() {
            let cam = PointMap::from_depth(&f.depth, &f.intrinsics, t).unwrap();
            let first = transform_pointmap(&cam, &f.extrinsics, &e0, 0).unwrap();
            assert_eq!(first.valid, s.gt_pointmaps[t].valid);
            for (a, b) in first.data.iter().zip(&s.gt_pointmaps[t].data) {
                // single-precision comparison
                let a32 = a.map(|c| c as f32 as f64);
                assert!((a32 - b).norm() < tol * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn identity_spec_is_noop() {
        let s = scene();
        assert_eq!(augment(&s, &AugmentationSpec::identity(), 9).unwrap(), s);
    }

    #[test]
    fn half_crop_doubles_focal() {
        let s = scene();
        let p = AugmentParams {
            crop_scale: 0.5,
            ..AugmentParams::identity()
        };
        let out = apply(&s, &p).unwrap();
        for (a, b) in out.frames.iter().zip(&s.frames) {
            assert!((a.intrinsics.fx - 2.0 * b.intrinsics.fx).abs() < 1e-12);
            assert!((a.intrinsics.fy - 2.0 * b.intrinsics.fy).abs() < 1e-12);
            // centered principal point stays at the center
            assert!((a.intrinsics.px - b.intrinsics.px).abs() < 1e-12);
            assert!((a.intrinsics.py - b.intrinsics.py).abs() < 1e-12);
        }
        assert_unproject_consistent(&out, 1e-6);
    }

    #[test]
    fn off_center_principal_point_is_remapped() {
        let mut s = scene();
        let k = Intrinsics::new(30.0, 30.0, 10.0, 20.0, 32, 32).unwrap();
        let cams: Vec<_> = s.frames.iter().map(|f| (f.time, k, f.extrinsics)).collect();
        s = SceneSample::render(s.config.clone(), s.layout.clone(), &cams).unwrap();
        let out = apply(
            &s,
            &AugmentParams {
                crop_scale: 0.5,
                ..AugmentParams::identity()
            },
        )
        .unwrap();
        // kept window [7.5, 23.5] maps onto [-0.5, 31.5]: source center 10 sits
        // 2.5 source pixels (5 output pixels) right of the window's left edge
        let nk = out.frames[0].intrinsics;
        assert!((nk.px - 4.5).abs() < 1e-12);
        assert!((nk.py - 24.5).abs() < 1e-12);
    }

    #[test]
    fn random_spec_preserves_consistency() {
        let spec = AugmentationSpec {
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            aspect_range: (0.7, 1.4),
            crop_scale_range: (0.5, 1.0),
        };
        let out = augment(&scene(), &spec, 3).unwrap();
        assert_unproject_consistent(&out, 1e-6);
        let k0 = out.frames[0].intrinsics;
        assert!(out.frames.iter().all(|f| f.intrinsics == k0));
        assert!(out.frames.iter().flat_map(|f| &f.rgb.data).flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_output() {
        let spec = AugmentationSpec {
            brightness: 0.2,
            crop_scale_range: (0.6, 1.0),
            ..AugmentationSpec::identity()
        };
        let s = scene();
        assert_eq!(augment(&s, &spec, 5).unwrap(), augment(&s, &spec, 5).unwrap());
    }

    #[test]
    fn degenerate_crop_rejected() {
        let p = AugmentParams {
            crop_scale: 0.01,
            ..AugmentParams::identity()
        };
        assert!(matches!(apply(&scene(), &p), Err(Error::DegenerateCrop(_))));
        let bad = AugmentationSpec {
            crop_scale_range: (0.0, 0.5),
            ..AugmentationSpec::identity()
        };
        assert!(augment(&scene(), &bad, 0).is_err());
    }
}
