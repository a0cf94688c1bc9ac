//! PNG renderings of heatmaps and rate-distortion curves.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::{BitHeatmap, RdCurve};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Maps `t ∈ [0, 1]` to a dark-to-bright color ramp.
pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let c = |k: usize| (STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmap scaled so its largest value is the brightest color.
pub fn heatmap_image(hm: &BitHeatmap) -> RgbImage {
    let peak = hm.max();
    RgbImage::from_fn(hm.width as u32, hm.height as u32, |x, y| {
        let v = hm.bits[y as usize * hm.width + x as usize];
        colormap(if peak > 0.0 { v / peak } else { 0.0 })
    })
}

pub fn save_heatmap(hm: &BitHeatmap, path: &Path) -> Result<()> {
    heatmap_image(hm).save(path)?;
    Ok(())
}

/// Renders a `[1,3,H,W]` frame with values in `[0, 1]`.
pub fn frame_image(x: &Tensor) -> RgbImage {
    RgbImage::from_fn(x.w() as u32, x.h() as u32, |px, py| {
        let c = |ch| (x.at(0, ch, py as usize, px as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([c(0), c(1), c(2)])
    })
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
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

fn draw_marker(img: &mut RgbImage, (x, y): (i64, i64), color: Rgb<u8>) {
    for dy in -2..=2 {
        draw_line(img, (x - 2, y + dy), (x + 2, y + dy), color);
    }
}

/// PSNR against bpp, one colored polyline per curve, on axes spanning the
/// data. Tick marks fall on every 0.1 bpp and every dB.
pub fn rd_plot(curves: &[RdCurve], width: u32, height: u32) -> Result<RgbImage> {
    let pts: Vec<_> = curves.iter().flat_map(|c| c.points()).collect();
    if pts.is_empty() || width < 64 || height < 64 {
        return Err(invalid("nothing to plot"));
    }
    let (x0, mut x1) = (0.0f64, pts.iter().map(|p| p.bpp).fold(0.0, f64::max));
    let mut y0 = pts
        .iter()
        .map(|p| p.psnr)
        .fold(f64::INFINITY, f64::min)
        .floor();
    let mut y1 = pts
        .iter()
        .map(|p| p.psnr)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil();
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let margin = 32i64;
    let (w, h) = (width as i64, height as i64);
    let to_px = |bpp: f64, db: f64| {
        let px = margin + ((bpp - x0) / (x1 - x0) * (w - 2 * margin) as f64).round() as i64;
        let py = h - margin - ((db - y0) / (y1 - y0) * (h - 2 * margin) as f64).round() as i64;
        (px, py)
    };
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([225, 225, 225]);
    let mut tick = 0.0;
    while tick <= x1 + 1e-9 {
        let (px, _) = to_px(tick, y0);
        draw_line(&mut img, (px, margin), (px, h - margin), grid);
        draw_line(&mut img, (px, h - margin), (px, h - margin + 4), axis);
        tick += 0.1;
    }
    let mut db = y0;
    while db <= y1 + 1e-9 {
        let (_, py) = to_px(x0, db);
        draw_line(&mut img, (margin, py), (w - margin, py), grid);
        draw_line(&mut img, (margin - 4, py), (margin, py), axis);
        db += 1.0;
    }
    draw_line(
        &mut img,
        (margin, h - margin),
        (w - margin, h - margin),
        axis,
    );
    draw_line(&mut img, (margin, margin), (margin, h - margin), axis);
    for (i, c) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        let px: Vec<_> = c.points().iter().map(|p| to_px(p.bpp, p.psnr)).collect();
        for seg in px.windows(2) {
            draw_line(&mut img, seg[0], seg[1], color);
        }
        for &p in &px {
            draw_marker(&mut img, p, color);
        }
    }
    Ok(img)
}

pub fn save_rd_plot(curves: &[RdCurve], path: &Path) -> Result<()> {
    rd_plot(curves, 640, 480)?.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RdPoint;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 4]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 164]));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn plot_draws_curve_points() {
        let c = RdCurve::new(
            "a",
            [(0.1, 30.0), (0.3, 34.0)]
                .iter()
                .map(|&(bpp, psnr)| RdPoint {
                    label: String::new(),
                    bpp,
                    psnr,
                })
                .collect(),
        )
        .unwrap();
        let img = rd_plot(&[c], 200, 100).unwrap();
        let colored = img.pixels().filter(|p| p.0 == PALETTE[0]).count();
        assert!(colored > 20);
        assert!(rd_plot(&[], 200, 100).is_err());
    }
}
