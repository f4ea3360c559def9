use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_sets, first_frame_trajectories, reconstruction_tracks, MetricRecord, ScaleMode, Thresholds3D,
    TrackPredictor,
};
use crate::synthdata::{load_bundle, write_bundle, SceneSample};
use crate::training::DatasetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// First-frame trajectories to every query time.
    Tracking,
    /// Per-frame pointmaps.
    Reconstruction,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracking" => Ok(Self::Tracking),
            "reconstruction" => Ok(Self::Reconstruction),
            other => Err(Error::InvalidConfig(format!("unknown eval mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Ground-truth depth range kept in reconstruction mode.
    pub depth_filter: Option<(f64, f64)>,
    pub scale_mode: ScaleMode,
    pub thresholds: Thresholds3D,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Tracking,
            depth_filter: None,
            scale_mode: ScaleMode::PerSeq,
            thresholds: Thresholds3D::default(),
        }
    }
}

/// Parses `MIN,MAX`.
pub fn parse_depth_filter(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidConfig(format!("depth filter must be MIN,MAX, got {text:?}"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo >= 0.0 && hi > lo) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// APD and EPE of `model` over `scenes`.
pub fn evaluate(
    model: &mut dyn TrackPredictor,
    scenes: &[SceneSample],
    dataset: &str,
    opts: &EvalOptions,
) -> Result<[MetricRecord; 2]> {
    let sets = scenes
        .iter()
        .map(|s| match opts.mode {
            EvalMode::Tracking => first_frame_trajectories(model, s),
            EvalMode::Reconstruction => reconstruction_tracks(model, s, opts.depth_filter),
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_sets(&sets, &opts.thresholds, opts.scale_mode, dataset)
}

/// Writes every scene of every dataset to `out/<dataset>/scene_<i>` and
/// returns the bundle directories.
pub fn generate_data(datasets: &[DatasetConfig], out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for d in datasets {
        let built = d.build()?;
        for (i, scene) in built.scenes.iter().enumerate() {
            let dir = out.join(&d.name).join(format!("scene_{i:04}"));
            write_bundle(scene, &dir)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

/// Loads every bundle directly under `dir`, in name order.
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneSample>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    entries.iter().map(|p| load_bundle(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{summary_table, OracleModel};
    use crate::synthdata::SceneConfig;

    #[test]
    fn oracle_is_perfect_in_both_modes() {
        let d = DatasetConfig {
            num_scenes: 2,
            scene: SceneConfig {
                width: 16,
                height: 16,
                ..SceneConfig::default()
            },
            ..DatasetConfig::default()
        };
        let scenes = d.build().unwrap().scenes;
        for mode in [EvalMode::Tracking, EvalMode::Reconstruction] {
            let opts = EvalOptions {
                mode,
                depth_filter: Some((0.1, 5.0)),
                ..EvalOptions::default()
            };
            let recs = evaluate(&mut OracleModel, &scenes, "synthetic", &opts).unwrap();
            assert_eq!(recs[0].value, 100.0);
            assert!(recs[1].value.abs() < 1e-12, "{}", recs[1].value);
            let table = summary_table(&recs);
            assert!(table.contains("100.00") && table.contains("0.0000"), "{table}");
        }
    }

    #[test]
    fn depth_filter_parsing() {
        assert_eq!(parse_depth_filter("0.1,5").unwrap(), (0.1, 5.0));
        assert!(parse_depth_filter("5,0.1").is_err());
        assert!(parse_depth_filter("x").is_err());
    }
}
