use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::plot::{draw_line, draw_marker};
use crate::error::{Error, Result};
use crate::geometry::{project, Vec3};
use crate::metrics::TrackPredictor;
use crate::synthdata::SceneSample;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// ASCII PLY with per-vertex color.
pub fn write_ply(path: &Path, points: &[Vec3], colors: &[[u8; 3]]) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::ShapeMismatch(format!("{} points, {} colors", points.len(), colors.len())));
    }
    let mut s = String::with_capacity(64 + 40 * points.len());
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in points.iter().zip(colors) {
        let _ = writeln!(s, "{} {} {} {} {} {}", p.x as f32, p.y as f32, p.z as f32, c[0], c[1], c[2]);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Predicted pointmaps of every frame as one colored cloud in frame 0's
/// coordinates; colors come from each point's source pixel.
pub fn prediction_cloud(model: &mut dyn TrackPredictor, sample: &SceneSample) -> Result<(Vec<Vec3>, Vec<[u8; 3]>)> {
    let maps = model.pointmaps(sample)?;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (map, frame) in maps.iter().zip(&sample.frames) {
        for (p, c) in map.iter().zip(&frame.rgb.data) {
            if p.iter().all(|v| v.is_finite()) {
                points.push(*p);
                colors.push(c.map(to_u8));
            }
        }
    }
    Ok((points, colors))
}

/// Frame 0 upscaled by `zoom` with trajectories of every `stride`-th pixel
/// drawn through all query times: ground truth in green, prediction in red.
/// Positions are projected with frame 0's intrinsics.
pub fn trajectory_overlay(
    model: &mut dyn TrackPredictor,
    sample: &SceneSample,
    stride: usize,
    zoom: u32,
    path: &Path,
) -> Result<()> {
    let (w, h) = (sample.width(), sample.height());
    let k = sample.frames[0].intrinsics;
    let rgb = &sample.frames[0].rgb;
    let mut img = RgbImage::from_fn(w as u32 * zoom, h as u32 * zoom, |x, y| {
        let c = rgb.data[(y / zoom) as usize * w + (x / zoom) as usize];
        Rgb(c.map(|v| to_u8(v * 0.6 + 0.2)))
    });
    let stride = stride.max(1);
    let picked: Vec<usize> = (0..h)
        .step_by(stride)
        .flat_map(|j| (0..w).step_by(stride).map(move |i| j * w + i))
        .filter(|&idx| sample.frames[0].depth.valid[idx])
        .collect();
    let n = sample.num_frames();
    let mut pred_tracks = vec![Vec::with_capacity(n); picked.len()];
    let mut gt_tracks = vec![Vec::with_capacity(n); picked.len()];
    for q in 0..n {
        let pred = model.first_frame(sample, q)?;
        let gt = sample.pointmap_at(0, q)?;
        for (t, &idx) in picked.iter().enumerate() {
            pred_tracks[t].push(pred.points[idx] + pred.motion[idx]);
            gt_tracks[t].push(gt.data[idx]);
        }
    }
    let z = zoom as f64;
    let px = |p: &Vec3| -> Option<(i64, i64)> {
        let ((u, v), _) = project(p, &k).ok()?;
        Some((((u + 0.5) * z) as i64, ((v + 0.5) * z) as i64))
    };
    for (tracks, color) in [(&gt_tracks, [40, 200, 60]), (&pred_tracks, [230, 40, 40])] {
        for track in tracks.iter() {
            let pts: Vec<(i64, i64)> = track.iter().filter_map(&px).collect();
            for pair in pts.windows(2) {
                draw_line(&mut img, pair[0], pair[1], color);
            }
            if let Some(last) = pts.last() {
                draw_marker(&mut img, *last, 1, color);
            }
        }
    }
    img.save(path)?;
    Ok(())
}
