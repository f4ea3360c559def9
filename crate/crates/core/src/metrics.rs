//! Median-scaled 3D tracking and reconstruction metrics (APD, EPE) and
//! trajectory extraction for points of the first frame.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::synthdata::SceneSample;

/// Matched predicted and ground-truth positions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub pred: Vec<Vec3>,
    pub gt: Vec<Vec3>,
    /// Evaluated time of each entry.
    pub time: Vec<usize>,
    /// Point (pixel) index of each entry.
    pub point: Vec<usize>,
}

impl TrackSet {
    pub fn new(pred: Vec<Vec3>, gt: Vec<Vec3>) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions for {} ground-truth points",
                pred.len(),
                gt.len()
            )));
        }
        let n = pred.len();
        Ok(Self {
            pred,
            gt,
            time: vec![0; n],
            point: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn push(&mut self, pred: Vec3, gt: Vec3, time: usize, point: usize) {
        self.pred.push(pred);
        self.gt.push(gt);
        self.time.push(time);
        self.point.push(point);
    }

    pub fn extend(&mut self, other: &TrackSet) {
        self.pred.extend_from_slice(&other.pred);
        self.gt.extend_from_slice(&other.gt);
        self.time.extend_from_slice(&other.time);
        self.point.extend_from_slice(&other.point);
    }

    /// Multiplies every prediction by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            pred: self.pred.iter().map(|p| p * k).collect(),
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyTracks);
        }
        if self.pred.len() != self.gt.len() {
            return Err(Error::ShapeMismatch("prediction and ground-truth counts differ".into()));
        }
        Ok(())
    }
}

/// Ordered distance thresholds in scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds3D(pub Vec<f64>);

impl Default for Thresholds3D {
    fn default() -> Self {
        Self(vec![0.1, 0.3, 0.5, 1.0])
    }
}

impl Thresholds3D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values[0] <= 0.0 || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(format!(
                "thresholds must be positive and strictly increasing, got {values:?}"
            )));
        }
        Ok(Self(values))
    }
}

/// Which side the median scale multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleTarget {
    /// `|s * pred - gt|`.
    #[default]
    Prediction,
    /// `|pred - s * gt|`, the literal reading of the APD formula.
    GroundTruth,
}

/// Lower-middle median (index `(n - 1) / 2` of the sorted values).
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// `median |gt| / median |pred|`.
pub fn median_scale(tracks: &TrackSet) -> Result<f64> {
    tracks.check()?;
    let mut gt: Vec<f64> = tracks.gt.iter().map(|p| p.norm()).collect();
    let mut pred: Vec<f64> = tracks.pred.iter().map(|p| p.norm()).collect();
    let mg = lower_median(&mut gt).ok_or(Error::EmptyTracks)?;
    let mp = lower_median(&mut pred).ok_or(Error::EmptyTracks)?;
    if !(mp > 0.0) {
        return Err(Error::DegeneratePrediction);
    }
    Ok(mg / mp)
}

fn residuals(tracks: &TrackSet, s: f64, target: ScaleTarget) -> Vec<f64> {
    tracks
        .pred
        .iter()
        .zip(&tracks.gt)
        .map(|(p, g)| match target {
            ScaleTarget::Prediction => (p * s - g).norm(),
            ScaleTarget::GroundTruth => (p - g * s).norm(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApdResult {
    /// Percentage in `[0, 100]`.
    pub apd: f64,
    pub scale: f64,
    /// `(threshold, percentage within it)`.
    pub per_threshold: Vec<(f64, f64)>,
}

pub fn apd_with(tracks: &TrackSet, thresholds: &Thresholds3D, target: ScaleTarget) -> Result<ApdResult> {
    let s = median_scale(tracks)?;
    let r = residuals(tracks, s, target);
    let per_threshold: Vec<(f64, f64)> = thresholds
        .0
        .iter()
        .map(|&d| (d, 100.0 * r.iter().filter(|e| **e < d).count() as f64 / r.len() as f64))
        .collect();
    let apd = per_threshold.iter().map(|(_, p)| p).sum::<f64>() / per_threshold.len() as f64;
    Ok(ApdResult {
        apd,
        scale: s,
        per_threshold,
    })
}

/// APD with predictions scaled by the median ratio.
pub fn apd(tracks: &TrackSet, thresholds: &Thresholds3D) -> Result<f64> {
    Ok(apd_with(tracks, thresholds, ScaleTarget::Prediction)?.apd)
}

/// Mean distance between scaled predictions and ground truth.
pub fn epe(tracks: &TrackSet) -> Result<f64> {
    let s = median_scale(tracks)?;
    let r = residuals(tracks, s, ScaleTarget::Prediction);
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Frame 0's predicted pointmap at its own time and its predicted motion to
/// the query time, row-major over pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstFramePrediction {
    pub points: Vec<Vec3>,
    pub motion: Vec<Vec3>,
}

/// Anything that can be evaluated: a trained network, an oracle or a stub.
pub trait TrackPredictor {
    fn first_frame(&mut self, sample: &SceneSample, q: usize) -> Result<FirstFramePrediction>;

    /// Per-frame pointmaps `1X^t_t`.
    fn pointmaps(&mut self, sample: &SceneSample) -> Result<Vec<Vec<Vec3>>>;
}

/// Returns the ground truth; used to check the evaluation plumbing.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl TrackPredictor for OracleModel {
    fn first_frame(&mut self, sample: &SceneSample, q: usize) -> Result<FirstFramePrediction> {
        Ok(FirstFramePrediction {
            points: sample.gt_pointmaps[0].data.clone(),
            motion: sample.make_motion_target(0, q)?.data,
        })
    }

    fn pointmaps(&mut self, sample: &SceneSample) -> Result<Vec<Vec<Vec3>>> {
        Ok(sample.gt_pointmaps.iter().map(|p| p.data.clone()).collect())
    }
}

/// Wraps a predictor and replaces its motion with zeros.
#[derive(Debug, Clone)]
pub struct ZeroMotion<P>(pub P);

impl<P: TrackPredictor> TrackPredictor for ZeroMotion<P> {
    fn first_frame(&mut self, sample: &SceneSample, q: usize) -> Result<FirstFramePrediction> {
        let mut p = self.0.first_frame(sample, q)?;
        p.motion.iter_mut().for_each(|m| *m = Vec3::zeros());
        Ok(p)
    }

    fn pointmaps(&mut self, sample: &SceneSample) -> Result<Vec<Vec<Vec3>>> {
        self.0.pointmaps(sample)
    }
}

/// Tracks of frame 0's pixels to every query time, evaluated where the point
/// is visible at the query time.
pub fn first_frame_trajectories(model: &mut dyn TrackPredictor, sample: &SceneSample) -> Result<TrackSet> {
    let mut tracks = TrackSet::default();
    for q in 0..sample.num_frames() {
        let target = sample.make_motion_target(0, q)?;
        let gt = sample.pointmap_at(0, q)?;
        let pred = model.first_frame(sample, q)?;
        if pred.points.len() != gt.data.len() || pred.motion.len() != gt.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction has {} points for a {}-pixel frame",
                pred.points.len(),
                gt.data.len()
            )));
        }
        for (idx, valid) in target.valid.iter().enumerate() {
            if *valid {
                tracks.push(pred.points[idx] + pred.motion[idx], gt.data[idx], q, idx);
            }
        }
    }
    Ok(tracks)
}

/// Per-frame reconstruction as a track set, optionally restricted to
/// ground-truth depths in `[min, max]`.
pub fn reconstruction_tracks(
    model: &mut dyn TrackPredictor,
    sample: &SceneSample,
    depth_filter: Option<(f64, f64)>,
) -> Result<TrackSet> {
    let preds = model.pointmaps(sample)?;
    let mut tracks = TrackSet::default();
    for (t, (pred, gt)) in preds.iter().zip(&sample.gt_pointmaps).enumerate() {
        let depth = &sample.frames[t].depth;
        for (idx, valid) in gt.valid.iter().enumerate() {
            let keep = *valid && depth_filter.is_none_or(|(lo, hi)| (lo..=hi).contains(&depth.data[idx]));
            if keep {
                tracks.push(pred[idx], gt.data[idx], t, idx);
            }
        }
    }
    Ok(tracks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// One scale per sequence; metrics averaged over sequences.
    #[default]
    PerSeq,
    /// One scale over the union of all sequences.
    Global,
}

impl std::str::FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-seq" => Ok(Self::PerSeq),
            "global" => Ok(Self::Global),
            other => Err(Error::InvalidConfig(format!("unknown scale mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub dataset: String,
    /// Median scale; the mean over sequences in per-sequence mode.
    pub scale: f64,
    pub per_threshold: Vec<(f64, f64)>,
    pub value: f64,
    pub points: usize,
}

/// APD and EPE records for a collection of sequences.
pub fn evaluate_sets(
    sets: &[TrackSet],
    thresholds: &Thresholds3D,
    mode: ScaleMode,
    dataset: &str,
) -> Result<[MetricRecord; 2]> {
    let merged;
    let groups: &[TrackSet] = match mode {
        ScaleMode::PerSeq => sets,
        ScaleMode::Global => {
            let mut all = TrackSet::default();
            sets.iter().for_each(|s| all.extend(s));
            merged = [all];
            &merged
        }
    };
    let groups: Vec<&TrackSet> = groups.iter().filter(|g| !g.is_empty()).collect();
    if groups.is_empty() {
        return Err(Error::EmptyTracks);
    }
    let n = groups.len() as f64;
    let mut apd_sum = 0.0;
    let mut epe_sum = 0.0;
    let mut scale_sum = 0.0;
    let mut per = vec![0.0; thresholds.0.len()];
    for g in &groups {
        let a = apd_with(g, thresholds, ScaleTarget::Prediction)?;
        apd_sum += a.apd;
        scale_sum += a.scale;
        per.iter_mut().zip(&a.per_threshold).for_each(|(acc, (_, p))| *acc += p);
        epe_sum += epe(g)?;
    }
    let per_threshold: Vec<(f64, f64)> = thresholds.0.iter().zip(per).map(|(d, p)| (*d, p / n)).collect();
    let points = groups.iter().map(|g| g.len()).sum();
    Ok([
        MetricRecord {
            metric: "apd".into(),
            dataset: dataset.into(),
            scale: scale_sum / n,
            per_threshold,
            value: apd_sum / n,
            points,
        },
        MetricRecord {
            metric: "epe".into(),
            dataset: dataset.into(),
            scale: scale_sum / n,
            per_threshold: Vec::new(),
            value: epe_sum / n,
            points,
        },
    ])
}

pub fn write_records(out: &mut impl Write, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Plain-text table with one row per dataset: APD with two decimals, EPE with four.
pub fn summary_table(records: &[MetricRecord]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let width = datasets.iter().map(|d| d.len()).max().unwrap_or(0).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>7}  {:>8}  {:>8}", "dataset", "APD", "EPE", "scale");
    for d in datasets {
        let find = |m: &str| records.iter().find(|r| r.dataset == d && r.metric == m);
        let (apd, epe) = (find("apd"), find("epe"));
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>8}  {:>8}",
            d,
            apd.map_or("-".into(), |r| format!("{:.2}", r.value)),
            epe.map_or("-".into(), |r| format!("{:.4}", r.value)),
            apd.or(epe).map_or("-".into(), |r| format!("{:.4}", r.scale)),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> TrackSet {
        let v = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.5..5.0));
        let gt: Vec<Vec3> = (0..n).map(|_| v(rng)).collect();
        let pred = gt.iter().map(|g| g * 1.3 + v(rng) * 0.1).collect();
        TrackSet::new(pred, gt).unwrap()
    }

    fn sort_median(mut v: Vec<f64>) -> f64 {
        for i in 0..v.len() {
            for j in 0..v.len() - 1 - i {
                if v[j] > v[j + 1] {
                    v.swap(j, j + 1);
                }
            }
        }
        v[(v.len() - 1) / 2]
    }

    #[test]
    fn median_is_lower_middle() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn trivial_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_set(&mut rng, 10);
        let same = TrackSet::new(s.gt.clone(), s.gt.clone()).unwrap();
        assert_eq!(median_scale(&same).unwrap(), 1.0);
        assert_eq!(apd(&same, &Thresholds3D::default()).unwrap(), 100.0);
        assert_eq!(epe(&same).unwrap(), 0.0);
        let doubled = TrackSet::new(s.gt.iter().map(|g| g * 2.0).collect(), s.gt.clone()).unwrap();
        assert_eq!(median_scale(&doubled).unwrap(), 0.5);
        assert_eq!(apd(&doubled, &Thresholds3D::default()).unwrap(), 100.0);
        assert_eq!(epe(&doubled).unwrap(), 0.0);
    }

    #[test]
    fn hand_enumerated_apd() {
        // medians of both norm sets are 5, so s = 1 and the errors are
        // 0.05, 2.0, 0.2 and 0.4: 4 + 0 + 3 + 2 = 9 of 16 indicators hold
        let z = |v: f64| Vec3::new(0.0, 0.0, v);
        let gt = vec![z(1.0), z(5.0), z(5.2), z(30.0)];
        let pred = vec![z(1.05), z(7.0), z(5.0), z(30.4)];
        let t = TrackSet::new(pred, gt).unwrap();
        assert_eq!(median_scale(&t).unwrap(), 1.0);
        assert_eq!(apd(&t, &Thresholds3D::default()).unwrap(), 56.25);
    }

    #[test]
    fn literal_variant_differs_only_in_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_set(&mut rng, 50);
        let th = Thresholds3D::default();
        let a = apd_with(&t, &th, ScaleTarget::GroundTruth).unwrap();
        let s = a.scale;
        let mut count = 0usize;
        for d in &th.0 {
            for (p, g) in t.pred.iter().zip(&t.gt) {
                count += usize::from((p - g * s).norm() < *d);
            }
        }
        assert!((a.apd - 100.0 * count as f64 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn matches_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..60);
            let t = random_set(&mut rng, n);
            let s = sort_median(t.gt.iter().map(|p| p.norm()).collect())
                / sort_median(t.pred.iter().map(|p| p.norm()).collect());
            assert!((median_scale(&t).unwrap() - s).abs() < 1e-12);
            let mut hits = 0usize;
            let mut dist = 0.0;
            for (p, g) in t.pred.iter().zip(&t.gt) {
                let e = ((p.x * s - g.x).powi(2) + (p.y * s - g.y).powi(2) + (p.z * s - g.z).powi(2)).sqrt();
                dist += e;
                for d in [0.1, 0.3, 0.5, 1.0] {
                    hits += usize::from(e < d);
                }
            }
            assert!((apd(&t, &Thresholds3D::default()).unwrap() - 100.0 * hits as f64 / (4 * n) as f64).abs() < 1e-9);
            assert!((epe(&t).unwrap() - dist / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(median_scale(&TrackSet::default()), Err(Error::EmptyTracks)));
        let z = TrackSet::new(vec![Vec3::zeros(); 3], vec![Vec3::new(1.0, 0.0, 0.0); 3]).unwrap();
        assert!(matches!(epe(&z), Err(Error::DegeneratePrediction)));
        assert!(Thresholds3D::new(vec![0.3, 0.1]).is_err());
        assert!(TrackSet::new(vec![Vec3::zeros()], vec![]).is_err());
    }

    #[test]
    fn oracle_model_is_perfect() {
        let s = generate_scene(&SceneConfig {
            num_frames: 3,
            seed: 4,
            ..SceneConfig::default()
        })
        .unwrap();
        let tracks = first_frame_trajectories(&mut OracleModel, &s).unwrap();
        assert!(!tracks.is_empty());
        assert_eq!(apd(&tracks, &Thresholds3D::default()).unwrap(), 100.0);
        assert_eq!(epe(&tracks).unwrap(), 0.0);
        let rec = reconstruction_tracks(&mut OracleModel, &s, Some((0.1, 5.0))).unwrap();
        assert!(rec.len() <= s.gt_pointmaps.iter().map(|p| p.valid.iter().filter(|v| **v).count()).sum());
        assert_eq!(epe(&rec).unwrap(), 0.0);
        let [a, e] = evaluate_sets(&[tracks.clone(), rec], &Thresholds3D::default(), ScaleMode::PerSeq, "toy").unwrap();
        assert_eq!(a.value, 100.0);
        assert_eq!(e.value, 0.0);
        let table = summary_table(&[a, e]);
        assert!(table.contains("100.00") && table.contains("0.0000"));
        // query time 0 tracks are the frame-0 reconstruction
        let q0: Vec<_> = (0..tracks.len()).filter(|&k| tracks.time[k] == 0).collect();
        for k in q0 {
            assert_eq!(tracks.gt[k], s.gt_pointmaps[0].data[tracks.point[k]]);
        }
    }

    #[test]
    fn global_and_per_sequence_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_set(&mut rng, 20);
        let b = random_set(&mut rng, 30).scaled(3.0);
        let th = Thresholds3D::default();
        let [pa, pe] = evaluate_sets(&[a.clone(), b.clone()], &th, ScaleMode::PerSeq, "d").unwrap();
        assert!((pa.value - (apd(&a, &th).unwrap() + apd(&b, &th).unwrap()) / 2.0).abs() < 1e-12);
        assert!((pe.value - (epe(&a).unwrap() + epe(&b).unwrap()) / 2.0).abs() < 1e-12);
        let mut all = a.clone();
        all.extend(&b);
        let [ga, _] = evaluate_sets(&[a, b], &th, ScaleMode::Global, "d").unwrap();
        assert!((ga.value - apd(&all, &th).unwrap()).abs() < 1e-12);
        let mut buf = Vec::new();
        write_records(&mut buf, &[ga]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    proptest! {
        #[test]
        fn apd_in_range_and_scale_invariant(seed in 0u64..1000, k in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_set(&mut rng, 25);
            let th = Thresholds3D::default();
            let base = apd(&t, &th).unwrap();
            prop_assert!((0.0..=100.0).contains(&base));
            prop_assert!((apd(&t.scaled(k), &th).unwrap() - base).abs() < 1e-9);
            prop_assert!((epe(&t.scaled(k)).unwrap() - epe(&t).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn apd_monotone_in_thresholds(seed in 0u64..1000, bump in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_set(&mut rng, 25);
            let lo = Thresholds3D::new(vec![0.1, 0.3, 0.5, 1.0]).unwrap();
            let hi = Thresholds3D::new(vec![0.1 + bump, 0.3 + bump, 0.5 + bump, 1.0 + bump]).unwrap();
            prop_assert!(apd(&t, &hi).unwrap() >= apd(&t, &lo).unwrap());
        }

        #[test]
        fn permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_set(&mut rng, 25);
            let mut idx: Vec<usize> = (0..25).collect();
            for i in (1..25).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let p = TrackSet::new(idx.iter().map(|&i| t.pred[i]).collect(), idx.iter().map(|&i| t.gt[i]).collect()).unwrap();
            let th = Thresholds3D::default();
            prop_assert_eq!(apd(&p, &th).unwrap(), apd(&t, &th).unwrap());
            prop_assert!((epe(&p).unwrap() - epe(&t).unwrap()).abs() < 1e-12);
        }
    }
}
