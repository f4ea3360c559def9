//! Training objective: camera Huber loss, depth and point losses with
//! confidence and gradient terms, and the motion regression loss.
//!
//! Maps are channel-first tensors `[B, C, H, W]`; masks are `u8` tensors of
//! shape `[B, 1, H, W]`; uncertainties are `[B, 1, H, W]`. Everything is
//! generic over the float dtype so the same code serves training (`f32`) and
//! finite-difference checks (`f64`).

use std::collections::BTreeMap;

use candle::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added under the square root so the norm is differentiable at zero while
/// a zero residual still maps to exactly zero.
const NORM_EPS: f64 = 8.271806125530277e-25; // 2^-80
const NORM_EPS_SQRT: f64 = 9.094947017729282e-13; // 2^-40

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub camera: f64,
    pub depth: f64,
    pub point: f64,
    pub motion: f64,
    /// Weight of the `-log(sigma)` regularizer.
    pub alpha: f64,
    /// Huber threshold of the camera loss.
    pub huber_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            camera: 5.0,
            depth: 1.0,
            point: 1.0,
            motion: 1.0,
            alpha: 0.2,
            huber_eps: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.camera, self.depth, self.point, self.motion, self.alpha];
        if all.iter().any(|w| !(*w >= 0.0)) || !(self.huber_eps > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Euclidean norm over dimension 1, kept as a singleton channel.
pub fn smooth_norm(x: &Tensor) -> Result<Tensor> {
    Ok(((x.sqr()?.sum_keepdim(1)? + NORM_EPS)?.sqrt()? - NORM_EPS_SQRT)?)
}

fn mask_count(mask: &Tensor) -> Result<f64> {
    Ok(mask.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?)
}

fn masked_mean(values: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let n = mask_count(mask)?;
    let zeros = values.zeros_like()?;
    let kept = mask.broadcast_as(values.shape())?.where_cond(values, &zeros)?;
    Ok((kept.sum_all()? / n.max(1.0))?)
}

/// Replaces predictions at invalid pixels by the target so that neither the
/// loss nor its gradient depends on them.
fn masked_pred(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.dims(), gt.dims())));
    }
    let (b, _, h, w) = pred.dims4()?;
    if mask.dims() != [b, 1, h, w] {
        return Err(Error::ShapeMismatch(format!("mask {:?} for map {:?}", mask.dims(), pred.dims())));
    }
    Ok(mask.broadcast_as(pred.shape())?.where_cond(pred, gt)?)
}

fn safe_sigma(sigma: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let ones = sigma.ones_like()?;
    let s = mask.where_cond(sigma, &ones)?;
    let min = s.to_dtype(DType::F64)?.min_all()?.to_scalar::<f64>()?;
    if !(min > 0.0) {
        return Err(Error::NonPositiveUncertainty(min));
    }
    Ok(s)
}

/// Huber loss summed over frames and the 9 camera components.
pub fn camera_loss(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!("camera {:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let r = (pred - gt)?;
    let a = r.abs()?;
    let quadratic = (r.sqr()? * 0.5)?;
    let linear = ((&a - eps / 2.0)? * eps)?;
    Ok(a.lt(eps)?.where_cond(&quadratic, &linear)?.sum_all()?)
}

/// Mean residual norm over valid pixels.
pub fn map_regression_loss(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let p = masked_pred(pred, gt, mask)?;
    masked_mean(&smooth_norm(&(p - gt)?)?, mask)
}

/// Mean of `sigma * |residual| - alpha * log(sigma)` over valid pixels.
pub fn confidence_loss(pred: &Tensor, gt: &Tensor, sigma: &Tensor, mask: &Tensor, alpha: f64) -> Result<Tensor> {
    let p = masked_pred(pred, gt, mask)?;
    let s = safe_sigma(sigma, mask)?;
    let per_pixel = ((&s * smooth_norm(&(p - gt)?)?)? - (s.log()? * alpha)?)?;
    masked_mean(&per_pixel, mask)
}

/// Pixels whose right and lower neighbours exist and are valid, shape `[B, 1, H-1, W-1]`.
pub fn gradient_mask(mask: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = mask.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch(format!("gradient loss needs at least 2x2 maps, got {h}x{w}")));
    }
    let m = mask.to_dtype(DType::F32)?;
    let here = m.narrow(2, 0, h - 1)?.narrow(3, 0, w - 1)?;
    let right = m.narrow(2, 0, h - 1)?.narrow(3, 1, w - 1)?;
    let down = m.narrow(2, 1, h - 1)?.narrow(3, 0, w - 1)?;
    Ok((here * right)?.mul(&down)?.ne(0f64)?)
}

fn forward_differences(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let base = x.narrow(2, 0, h - 1)?.narrow(3, 0, w - 1)?;
    let dx = (x.narrow(2, 0, h - 1)?.narrow(3, 1, w - 1)? - &base)?;
    let dy = (x.narrow(2, 1, h - 1)?.narrow(3, 0, w - 1)? - &base)?;
    Ok(Tensor::cat(&[dx, dy], 1)?)
}

/// Mean over gradient-valid pixels of `sigma * |grad(pred) - grad(gt)|`, with
/// forward differences along both axes stacked into one vector per pixel.
pub fn gradient_loss(pred: &Tensor, gt: &Tensor, sigma: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let p = masked_pred(pred, gt, mask)?;
    let s = safe_sigma(sigma, mask)?;
    let gmask = gradient_mask(mask)?;
    let (_, _, h, w) = p.dims4()?;
    let diff = (forward_differences(&p)? - forward_differences(gt)?)?;
    let s = s.narrow(2, 0, h - 1)?.narrow(3, 0, w - 1)?;
    masked_mean(&(s * smooth_norm(&diff)?)?, &gmask)
}

/// Motion is supervised by regression only.
pub fn motion_loss(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    map_regression_loss(pred, target, mask)
}

/// Regression, confidence and gradient terms of one supervised map.
#[derive(Debug, Clone)]
pub struct MapTerms {
    pub reg: Tensor,
    pub conf: Option<Tensor>,
    pub grad: Tensor,
    pub count: usize,
}

impl MapTerms {
    pub fn compute(
        pred: &Tensor,
        gt: &Tensor,
        sigma: &Tensor,
        mask: &Tensor,
        alpha: f64,
        with_confidence: bool,
    ) -> Result<Self> {
        Ok(Self {
            reg: map_regression_loss(pred, gt, mask)?,
            conf: if with_confidence {
                Some(confidence_loss(pred, gt, sigma, mask, alpha)?)
            } else {
                None
            },
            grad: gradient_loss(pred, gt, sigma, mask)?,
            count: mask_count(mask)? as usize,
        })
    }

    fn sum(&self) -> Result<Tensor> {
        let mut s = (&self.reg + &self.grad)?;
        if let Some(c) = &self.conf {
            s = (s + c)?;
        }
        Ok(s)
    }
}

/// Loss terms computed on one batch; absent terms contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub camera: Option<Tensor>,
    pub depth: Option<MapTerms>,
    pub point: Option<MapTerms>,
    pub motion: Option<(Tensor, usize)>,
}

/// Scalar breakdown of one step's loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub camera: f64,
    pub depth_reg: f64,
    pub depth_conf: f64,
    pub depth_grad: f64,
    pub point_reg: f64,
    pub point_conf: f64,
    pub point_grad: f64,
    pub motion_reg: f64,
    pub depth_pixels: usize,
    pub point_pixels: usize,
    pub motion_pixels: usize,
    /// Set when a supervised term had an empty mask and was defined as 0.
    pub empty_mask: bool,
}

impl LossReport {
    pub fn depth(&self) -> f64 {
        self.depth_reg + self.depth_conf + self.depth_grad
    }

    pub fn point(&self) -> f64 {
        self.point_reg + self.point_conf + self.point_grad
    }

    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.camera * self.camera + w.depth * self.depth() + w.point * self.point() + w.motion * self.motion_reg
    }

    /// Flat key-value record for line-delimited logs.
    pub fn to_record(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("total", self.total),
            ("camera", self.camera),
            ("depth_reg", self.depth_reg),
            ("depth_conf", self.depth_conf),
            ("depth_grad", self.depth_grad),
            ("point_reg", self.point_reg),
            ("point_conf", self.point_conf),
            ("point_grad", self.point_grad),
            ("motion_reg", self.motion_reg),
            ("depth_pixels", self.depth_pixels as f64),
            ("point_pixels", self.point_pixels as f64),
            ("motion_pixels", self.motion_pixels as f64),
        ] {
            m.insert(k.to_string(), v);
        }
        m
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Weighted sum of the active components, returned as a differentiable
/// scalar together with its breakdown.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<(Tensor, LossReport)> {
    let mut report = LossReport::default();
    let mut parts: Vec<Tensor> = Vec::new();
    if let Some(cam) = &c.camera {
        report.camera = scalar(cam)?;
        parts.push((cam * w.camera)?);
    }
    if let Some(d) = &c.depth {
        report.depth_reg = scalar(&d.reg)?;
        report.depth_conf = d.conf.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        report.depth_grad = scalar(&d.grad)?;
        report.depth_pixels = d.count;
        report.empty_mask |= d.count == 0;
        parts.push((d.sum()? * w.depth)?);
    }
    if let Some(p) = &c.point {
        report.point_reg = scalar(&p.reg)?;
        report.point_conf = p.conf.as_ref().map(scalar).transpose()?.unwrap_or(0.0);
        report.point_grad = scalar(&p.grad)?;
        report.point_pixels = p.count;
        report.empty_mask |= p.count == 0;
        parts.push((p.sum()? * w.point)?);
    }
    if let Some((m, n)) = &c.motion {
        report.motion_reg = scalar(m)?;
        report.motion_pixels = *n;
        report.empty_mask |= *n == 0;
        parts.push((m * w.motion)?);
    }
    let total = match parts.split_first() {
        Some((first, rest)) => rest.iter().try_fold(first.clone(), |acc, p| acc + p)?,
        None => Tensor::new(0f32, &candle::Device::Cpu)?,
    };
    report.total = scalar(&total)?;
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle::{Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DEV: Device = Device::Cpu;

    struct Map {
        b: usize,
        c: usize,
        h: usize,
        w: usize,
        data: Vec<f64>,
    }

    impl Map {
        fn random(rng: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Self {
            let data = (0..b * c * h * w).map(|_| rng.random_range(lo..hi)).collect();
            Self { b, c, h, w, data }
        }
        fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
            self.data[((b * self.c + c) * self.h + y) * self.w + x]
        }
        fn tensor(&self) -> Tensor {
            Tensor::from_vec(self.data.clone(), (self.b, self.c, self.h, self.w), &DEV).unwrap()
        }
    }

    fn random_mask(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize) -> Vec<u8> {
        (0..b * h * w).map(|_| u8::from(rng.random_bool(0.7))).collect()
    }

    fn mask_tensor(m: &[u8], b: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(m.to_vec(), (b, 1, h, w), &DEV).unwrap()
    }

    fn val(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    fn pixel_norm(p: &Map, g: &Map, b: usize, y: usize, x: usize) -> f64 {
        (0..p.c).map(|c| (p.at(b, c, y, x) - g.at(b, c, y, x)).powi(2)).sum::<f64>().sqrt()
    }

    fn oracle_reg(p: &Map, g: &Map, m: &[u8]) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for b in 0..p.b {
            for y in 0..p.h {
                for x in 0..p.w {
                    if m[(b * p.h + y) * p.w + x] == 1 {
                        s += pixel_norm(p, g, b, y, x);
                        n += 1;
                    }
                }
            }
        }
        if n == 0 { 0.0 } else { s / n as f64 }
    }

    fn oracle_conf(p: &Map, g: &Map, s: &Map, m: &[u8], alpha: f64) -> f64 {
        let (mut acc, mut n) = (0.0, 0usize);
        for b in 0..p.b {
            for y in 0..p.h {
                for x in 0..p.w {
                    if m[(b * p.h + y) * p.w + x] == 1 {
                        let sig = s.at(b, 0, y, x);
                        acc += sig * pixel_norm(p, g, b, y, x) - alpha * sig.ln();
                        n += 1;
                    }
                }
            }
        }
        acc / n.max(1) as f64
    }

    fn oracle_grad(p: &Map, g: &Map, s: &Map, m: &[u8]) -> f64 {
        let ok = |b: usize, y: usize, x: usize| m[(b * p.h + y) * p.w + x] == 1;
        let (mut acc, mut n) = (0.0, 0usize);
        for b in 0..p.b {
            for y in 0..p.h - 1 {
                for x in 0..p.w - 1 {
                    if !(ok(b, y, x) && ok(b, y, x + 1) && ok(b, y + 1, x)) {
                        continue;
                    }
                    let mut sq = 0.0;
                    for c in 0..p.c {
                        let dxp = p.at(b, c, y, x + 1) - p.at(b, c, y, x);
                        let dxg = g.at(b, c, y, x + 1) - g.at(b, c, y, x);
                        let dyp = p.at(b, c, y + 1, x) - p.at(b, c, y, x);
                        let dyg = g.at(b, c, y + 1, x) - g.at(b, c, y, x);
                        sq += (dxp - dxg).powi(2) + (dyp - dyg).powi(2);
                    }
                    acc += s.at(b, 0, y, x) * sq.sqrt();
                    n += 1;
                }
            }
        }
        acc / n.max(1) as f64
    }

    fn oracle_huber(p: &[f64], g: &[f64], eps: f64) -> f64 {
        p.iter()
            .zip(g)
            .map(|(a, b)| {
                let r = (a - b).abs();
                if r < eps { 0.5 * r * r } else { eps * (r - eps / 2.0) }
            })
            .sum()
    }

    #[test]
    fn huber_branches() {
        let p = Tensor::new(&[[0.05f64, 0.0]], &DEV).unwrap();
        let z = p.zeros_like().unwrap();
        assert!((val(&camera_loss(&p, &z, 0.1).unwrap()) - 0.5 * 0.05 * 0.05).abs() < 1e-15);
        let p = Tensor::new(&[[-0.5f64]], &DEV).unwrap();
        let z = p.zeros_like().unwrap();
        assert!((val(&camera_loss(&p, &z, 0.1).unwrap()) - 0.1 * (0.5 - 0.05)).abs() < 1e-15);
        assert_eq!(val(&camera_loss(&z, &z, 0.1).unwrap()), 0.0);
        let bad = Tensor::zeros((2, 9), DType::F64, &DEV).unwrap();
        assert!(camera_loss(&bad, &Tensor::zeros((3, 9), DType::F64, &DEV).unwrap(), 0.1).is_err());
    }

    #[test]
    fn camera_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let p: Vec<f64> = (0..45).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..45).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pt = Tensor::from_vec(p.clone(), (5, 9), &DEV).unwrap();
            let gt = Tensor::from_vec(g.clone(), (5, 9), &DEV).unwrap();
            assert!((val(&camera_loss(&pt, &gt, 0.1).unwrap()) - oracle_huber(&p, &g, 0.1)).abs() < 1e-9);
        }
    }

    #[test]
    fn map_losses_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in [1, 3, 1, 3, 3] {
            let (b, h, w) = (2, 5, 6);
            let p = Map::random(&mut rng, b, c, h, w, -2.0, 2.0);
            let g = Map::random(&mut rng, b, c, h, w, -2.0, 2.0);
            let s = Map::random(&mut rng, b, 1, h, w, 1.0, 3.0);
            let m = random_mask(&mut rng, b, h, w);
            let mt = mask_tensor(&m, b, h, w);
            let reg = val(&map_regression_loss(&p.tensor(), &g.tensor(), &mt).unwrap());
            assert!((reg - oracle_reg(&p, &g, &m)).abs() < 1e-9);
            let conf = val(&confidence_loss(&p.tensor(), &g.tensor(), &s.tensor(), &mt, 0.2).unwrap());
            assert!((conf - oracle_conf(&p, &g, &s, &m, 0.2)).abs() < 1e-9);
            let grad = val(&gradient_loss(&p.tensor(), &g.tensor(), &s.tensor(), &mt).unwrap());
            assert!((grad - oracle_grad(&p, &g, &s, &m)).abs() < 1e-9);
            let mot = val(&motion_loss(&p.tensor(), &g.tensor(), &mt).unwrap());
            assert!((mot - oracle_reg(&p, &g, &m)).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_forms() {
        let g = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (1, 1, 2, 2), &DEV).unwrap();
        let mask = Tensor::ones((1, 1, 2, 2), DType::U8, &DEV).unwrap();
        let shifted = (&g + 0.7).unwrap();
        assert!((val(&map_regression_loss(&shifted, &g, &mask).unwrap()) - 0.7).abs() < 1e-12);
        assert_eq!(val(&map_regression_loss(&g, &g, &mask).unwrap()), 0.0);
        let e = (g.ones_like().unwrap() * std::f64::consts::E).unwrap();
        assert!((val(&confidence_loss(&g, &g, &e, &mask, 1.0).unwrap()) + 1.0).abs() < 1e-12);
        let ones = g.ones_like().unwrap();
        assert!(val(&gradient_loss(&shifted, &g, &ones, &mask).unwrap()) < 1e-12);
        assert_eq!(val(&gradient_loss(&g, &g, &ones, &mask).unwrap()), 0.0);
    }

    #[test]
    fn unit_sigma_confidence_equals_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Map::random(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
        let g = Map::random(&mut rng, 1, 3, 4, 4, -1.0, 1.0);
        let m = mask_tensor(&random_mask(&mut rng, 1, 4, 4), 1, 4, 4);
        let ones = Tensor::ones((1, 1, 4, 4), DType::F64, &DEV).unwrap();
        let a = val(&confidence_loss(&p.tensor(), &g.tensor(), &ones, &m, 0.2).unwrap());
        let b = val(&map_regression_loss(&p.tensor(), &g.tensor(), &m).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_pixels_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Map::random(&mut rng, 1, 3, 5, 5, -1.0, 1.0);
        let g = Map::random(&mut rng, 1, 3, 5, 5, -1.0, 1.0);
        let s = Map::random(&mut rng, 1, 1, 5, 5, 1.0, 2.0);
        let m = random_mask(&mut rng, 1, 5, 5);
        let mt = mask_tensor(&m, 1, 5, 5);
        let mut p2 = Map { data: p.data.clone(), ..p };
        let mut s2 = Map { data: s.data.clone(), ..s };
        for (k, v) in m.iter().enumerate() {
            if *v == 0 {
                for c in 0..3 {
                    p2.data[c * 25 + k] = f64::NAN;
                }
                s2.data[k] = -5.0;
            }
        }
        let p = Map { data: p.data.clone(), b: 1, c: 3, h: 5, w: 5 };
        let s = Map { data: s.data.clone(), b: 1, c: 1, h: 5, w: 5 };
        let f = |pp: &Map, ss: &Map| {
            [
                val(&map_regression_loss(&pp.tensor(), &g.tensor(), &mt).unwrap()),
                val(&confidence_loss(&pp.tensor(), &g.tensor(), &ss.tensor(), &mt, 0.2).unwrap()),
                val(&gradient_loss(&pp.tensor(), &g.tensor(), &ss.tensor(), &mt).unwrap()),
                val(&motion_loss(&pp.tensor(), &g.tensor(), &mt).unwrap()),
            ]
        };
        assert_eq!(f(&p, &s), f(&p2, &s2));
        let _ = (&mut p2, &mut s2);
    }

    #[test]
    fn empty_mask_is_zero_and_flagged() {
        let p = Tensor::ones((1, 3, 4, 4), DType::F64, &DEV).unwrap();
        let g = p.zeros_like().unwrap();
        let s = Tensor::ones((1, 1, 4, 4), DType::F64, &DEV).unwrap();
        let m = Tensor::zeros((1, 1, 4, 4), DType::U8, &DEV).unwrap();
        let terms = MapTerms::compute(&p, &g, &s, &m, 0.2, true).unwrap();
        let (_, report) = total_loss(
            &LossComponents {
                point: Some(terms),
                ..Default::default()
            },
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(report.total, 0.0);
        assert!(report.empty_mask);
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let p = Tensor::ones((1, 1, 3, 3), DType::F64, &DEV).unwrap();
        let m = Tensor::ones((1, 1, 3, 3), DType::U8, &DEV).unwrap();
        let s = p.zeros_like().unwrap();
        assert!(matches!(
            confidence_loss(&p, &p, &s, &m, 0.2),
            Err(Error::NonPositiveUncertainty(_))
        ));
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let t = |rng: &mut ChaCha8Rng| Tensor::new(rng.random_range(-1.0f64..3.0), &DEV).unwrap();
            let c = LossComponents {
                camera: Some(t(&mut rng)),
                depth: Some(MapTerms {
                    reg: t(&mut rng),
                    conf: Some(t(&mut rng)),
                    grad: t(&mut rng),
                    count: 3,
                }),
                point: Some(MapTerms {
                    reg: t(&mut rng),
                    conf: Some(t(&mut rng)),
                    grad: t(&mut rng),
                    count: 3,
                }),
                motion: Some((t(&mut rng), 3)),
            };
            let w = LossWeights {
                camera: rng.random_range(0.0..5.0),
                depth: rng.random_range(0.0..5.0),
                point: rng.random_range(0.0..5.0),
                motion: rng.random_range(0.0..5.0),
                ..LossWeights::default()
            };
            let (total, r) = total_loss(&c, &w).unwrap();
            let dot = w.camera * r.camera
                + w.depth * (r.depth_reg + r.depth_conf + r.depth_grad)
                + w.point * (r.point_reg + r.point_conf + r.point_grad)
                + w.motion * r.motion_reg;
            assert!((val(&total) - dot).abs() < 1e-12);
            assert!((r.weighted_total(&w) - dot).abs() < 1e-12);
        }
        let zero = LossWeights {
            camera: 0.0,
            depth: 0.0,
            point: 0.0,
            motion: 0.0,
            ..LossWeights::default()
        };
        let c = LossComponents {
            camera: Some(Tensor::new(2.0f64, &DEV).unwrap()),
            ..Default::default()
        };
        assert_eq!(total_loss(&c, &zero).unwrap().1.total, 0.0);
    }

    /// Central differences of a scalar function of one map against autograd.
    fn check_gradient(values: &Map, f: impl Fn(&Tensor) -> Tensor) {
        let var = Var::from_tensor(&values.tensor()).unwrap();
        let grads = f(var.as_tensor()).backward().unwrap();
        let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        for k in 0..values.data.len() {
            let mut plus = values.data.clone();
            plus[k] += h;
            let mut minus = values.data.clone();
            minus[k] -= h;
            let shape = (values.b, values.c, values.h, values.w);
            let fp = val(&f(&Tensor::from_vec(plus, shape, &DEV).unwrap()));
            let fm = val(&f(&Tensor::from_vec(minus, shape, &DEV).unwrap()));
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            assert!(rel < 1e-4, "entry {k}: finite difference {fd} vs autograd {}", g[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let (b, c, h, w) = (1, 3, 4, 4);
            let p = Map::random(&mut rng, b, c, h, w, -1.0, 1.0);
            let g = Map::random(&mut rng, b, c, h, w, -1.0, 1.0);
            let s = Map::random(&mut rng, b, 1, h, w, 1.0, 2.0);
            let mt = mask_tensor(&random_mask(&mut rng, b, h, w), b, h, w);
            let (gt, st) = (g.tensor(), s.tensor());
            check_gradient(&p, |x| map_regression_loss(x, &gt, &mt).unwrap());
            check_gradient(&p, |x| confidence_loss(x, &gt, &st, &mt, 0.2).unwrap());
            check_gradient(&s, |x| confidence_loss(&p.tensor(), &gt, x, &mt, 0.2).unwrap());
            check_gradient(&p, |x| gradient_loss(x, &gt, &st, &mt).unwrap());
            check_gradient(&s, |x| gradient_loss(&p.tensor(), &gt, x, &mt).unwrap());
            check_gradient(&p, |x| motion_loss(x, &gt, &mt).unwrap());
        }
    }
}
