//! Bare line plots rendered straight to PNG: frame, grid ticks, one polyline
//! with point markers per series. No text; legends live in the caller's
//! records.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;

pub struct Series {
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

const MARGIN: i64 = 24;

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

/// Bresenham segment.
pub fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn draw_marker(img: &mut RgbImage, (x, y): (i64, i64), r: i64, c: [u8; 3]) {
    for dy in -r..=r {
        for dx in -r..=r {
            put(img, x + dx, y + dy, c);
        }
    }
}

/// Plots all series on shared linear axes spanning their data.
pub fn line_plot(series: &[Series], width: u32, height: u32, path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    if !all.is_empty() {
        x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).min(0.0);
        x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = 0.0;
        y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h) = (width as i64, height as i64);
    let to_px = |(x, y): (f64, f64)| {
        let u = MARGIN + ((x - x0) / (x1 - x0) * (w - 2 * MARGIN) as f64).round() as i64;
        let v = h - MARGIN - ((y - y0) / (y1 - y0) * (h - 2 * MARGIN) as f64).round() as i64;
        (u, v)
    };
    let grey = [200, 200, 200];
    for k in 0..=4 {
        let v = MARGIN + k * (h - 2 * MARGIN) / 4;
        draw_line(&mut img, (MARGIN, v), (w - MARGIN, v), grey);
    }
    let black = [0, 0, 0];
    draw_line(&mut img, (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), black);
    draw_line(&mut img, (MARGIN, MARGIN), (MARGIN, h - MARGIN), black);
    for s in series {
        let px: Vec<(i64, i64)> = s.points.iter().map(|p| to_px(*p)).collect();
        for pair in px.windows(2) {
            draw_line(&mut img, pair[0], pair[1], s.color);
        }
        for p in &px {
            draw_marker(&mut img, *p, 2, s.color);
        }
    }
    img.save(path)?;
    Ok(())
}
