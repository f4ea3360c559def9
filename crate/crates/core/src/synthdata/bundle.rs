//! On-disk scene bundles: one directory per sequence holding 8-bit PNG frames,
//! raw little-endian `f32` arrays and a JSON manifest.
//!
//! Array files start with a 20-byte header: the magic `DTRK`, then `dtype`,
//! `H`, `W`, `C` as little-endian `u32` (dtype 1 is `f32`), followed by
//! `H * W * C` values in row-major, channel-last order.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::SceneSample;
use super::scene::SceneLayout;
use super::SceneConfig;
use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, Intrinsics, Mat3, Vec3};

pub const ARRAY_MAGIC: [u8; 4] = *b"DTRK";
const DTYPE_F32: u32 = 1;
const FORMAT_TAG: &str = "densetrack-scene/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

pub fn write_array(path: &Path, header: ArrayHeader, data: &[f32]) -> Result<()> {
    if data.len() != header.height * header.width * header.channels {
        return Err(Error::Bundle {
            path: path.to_path_buf(),
            reason: format!("{} values for header {:?}", data.len(), header),
        });
    }
    let mut buf = Vec::with_capacity(20 + 4 * data.len());
    buf.extend_from_slice(&ARRAY_MAGIC);
    for v in [DTYPE_F32, header.height as u32, header.width as u32, header.channels as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<(ArrayHeader, Vec<f32>)> {
    let bad = |reason: String| Error::Bundle {
        path: path.to_path_buf(),
        reason,
    };
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || bytes[..4] != ARRAY_MAGIC {
        return Err(bad("missing array magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    if word(0) != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype {}", word(0))));
    }
    let header = ArrayHeader {
        height: word(1) as usize,
        width: word(2) as usize,
        channels: word(3) as usize,
    };
    let n = header.height * header.width * header.channels;
    if bytes.len() != 20 + 4 * n {
        return Err(bad(format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 20)));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
}

fn from_rows(r: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub time: f64,
    pub rgb: String,
    pub depth: String,
    pub pointmap: String,
    pub intrinsics: Intrinsics,
    pub camera_matrix: [[f64; 3]; 3],
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub source: usize,
    pub query: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub seed: u64,
    pub config: SceneConfig,
    pub layout: SceneLayout,
    pub frames: Vec<FrameRecord>,
    /// Motion maps have four channels: displacement xyz and validity (0 or 1).
    pub motion: Vec<MotionRecord>,
    /// `num_vertices x num_frames x 4` array: world xyz and visibility.
    pub vertex_tracks: String,
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `sample` into `dir` (created if missing) and returns its manifest.
pub fn write_bundle(sample: &SceneSample, dir: &Path) -> Result<BundleManifest> {
    fs::create_dir_all(dir)?;
    let (w, h) = (sample.width(), sample.height());
    let mut frames = Vec::new();
    for (t, f) in sample.frames.iter().enumerate() {
        let rgb_name = format!("rgb_{t:03}.png");
        let bytes: Vec<u8> = f.rgb.data.iter().flat_map(|c| c.map(to_u8)).collect();
        image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer sized from image")
            .save(dir.join(&rgb_name))?;

        let depth_name = format!("depth_{t:03}.bin");
        let depth: Vec<f32> = f
            .depth
            .data
            .iter()
            .zip(&f.depth.valid)
            .map(|(d, v)| if *v { *d as f32 } else { 0.0 })
            .collect();
        write_array(&dir.join(&depth_name), ArrayHeader { height: h, width: w, channels: 1 }, &depth)?;

        let points_name = format!("points_{t:03}.bin");
        let points: Vec<f32> = sample.gt_pointmaps[t]
            .data
            .iter()
            .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect();
        write_array(&dir.join(&points_name), ArrayHeader { height: h, width: w, channels: 3 }, &points)?;

        frames.push(FrameRecord {
            index: t,
            time: f.time,
            rgb: rgb_name,
            depth: depth_name,
            pointmap: points_name,
            intrinsics: f.intrinsics,
            camera_matrix: rows(&f.intrinsics.matrix()),
            rotation: rows(&f.extrinsics.rotation),
            translation: [f.extrinsics.translation.x, f.extrinsics.translation.y, f.extrinsics.translation.z],
        });
    }
    let mut motion = Vec::new();
    for t in 0..sample.num_frames() {
        for q in 0..sample.num_frames() {
            let m = sample.make_motion_target(t, q)?;
            let name = format!("motion_{t:03}_{q:03}.bin");
            let data: Vec<f32> = m
                .data
                .iter()
                .zip(&m.valid)
                .flat_map(|(d, v)| [d.x as f32, d.y as f32, d.z as f32, if *v { 1.0 } else { 0.0 }])
                .collect();
            write_array(&dir.join(&name), ArrayHeader { height: h, width: w, channels: 4 }, &data)?;
            motion.push(MotionRecord {
                source: t,
                query: q,
                file: name,
            });
        }
    }
    let tracks: Vec<f32> = sample
        .vertex_tracks
        .iter()
        .flat_map(|v| {
            v.positions
                .iter()
                .zip(&v.visible)
                .flat_map(|(p, vis)| [p.x as f32, p.y as f32, p.z as f32, if *vis { 1.0 } else { 0.0 }])
        })
        .collect();
    write_array(
        &dir.join("tracks.bin"),
        ArrayHeader {
            height: sample.vertex_tracks.len(),
            width: sample.num_frames(),
            channels: 4,
        },
        &tracks,
    )?;
    let manifest = BundleManifest {
        format: FORMAT_TAG.into(),
        seed: sample.config.seed,
        config: sample.config.clone(),
        layout: sample.layout.clone(),
        frames,
        motion,
        vertex_tracks: "tracks.bin".into(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path: PathBuf = dir.join("manifest.json");
    let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Bundle {
            path,
            reason: format!("unknown format {}", manifest.format),
        });
    }
    Ok(manifest)
}

/// Rebuilds a scene from its bundle by re-rendering the recorded layout and cameras.
pub fn load_bundle(dir: &Path) -> Result<SceneSample> {
    let manifest = read_manifest(dir)?;
    let cameras = manifest
        .frames
        .iter()
        .map(|f| {
            let e = Extrinsics::new(from_rows(&f.rotation), Vec3::from(f.translation))?;
            Ok((f.time, f.intrinsics, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sample = SceneSample::render(manifest.config.clone(), manifest.layout.clone(), &cameras)?;
    sample.rebuild_vertex_tracks();
    Ok(sample)
}
