//! Quality maps: the per-pixel rate-distortion control surface.
//!
//! A [`QualityMap`] holds weights in `[0, 1]`; [`lambda_map`] moves them into
//! the Lagrangian domain used by the weighted distortion loss.

mod gen;
pub mod io;
mod signal;

pub use gen::{
    boundary_crossings, generate_initial_map, generate_sequence, update_map, Base, GeneratedMap,
    MapGenConfig, MapScene, ShapeFeature, ShapeKind,
};
pub use signal::{
    analysis_grid, decode_qmap, dequantize_level, encode_qmap, grid_dims, quantize_level,
    signal_roundtrip, upsample_grid, SIGNAL_FACTOR,
};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.001;
pub const DEFAULT_BETA: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct QualityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl QualityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("quality map must be non-empty"));
        }
        if values.len() != height * width {
            return Err(invalid(format!(
                "quality map has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("quality map value {v} outside [0, 1]")));
        }
        Ok(QualityMap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `[1, 1, H, W]` tensor view for the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.clone())
    }

    /// Builds a map from a `[1, 1, H, W]` tensor, clamping into `[0, 1]`.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.dims();
        if n != 1 || c != 1 {
            return Err(invalid(format!(
                "expected a [1,1,H,W] map tensor, got {:?}",
                t.dims()
            )));
        }
        if !t.is_finite() {
            return Err(invalid("map tensor has non-finite values"));
        }
        Self::new(h, w, t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Per-pixel Lagrangian weights `alpha * exp(beta * m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl LambdaMap {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.clone())
    }
}

/// Scalar form of the quality-to-lambda mapping.
#[inline]
pub fn lambda_of(m: f64, alpha: f64, beta: f64) -> f64 {
    alpha * (beta * m).exp()
}

/// Inverse of [`lambda_of`].
#[inline]
pub fn level_of_lambda(lambda: f64, alpha: f64, beta: f64) -> f64 {
    (lambda / alpha).ln() / beta
}

pub fn lambda_map(m: &QualityMap, alpha: f64, beta: f64) -> Result<LambdaMap> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!(
            "alpha and beta must be positive, got {alpha}, {beta}"
        )));
    }
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite quality map value"));
    }
    Ok(LambdaMap {
        height: m.height,
        width: m.width,
        values: m
            .values
            .iter()
            .map(|&v| lambda_of(v, alpha, beta))
            .collect(),
        alpha,
        beta,
    })
}

pub fn uniform_map(height: usize, width: usize, level: f64) -> Result<QualityMap> {
    if !(0.0..=1.0).contains(&level) {
        return Err(invalid(format!("uniform level {level} outside [0, 1]")));
    }
    QualityMap::new(height, width, vec![level; height * width])
}

/// The homogeneous-map sweep grid `{0, 0.05, ..., 1.0}`.
pub fn sweep_levels() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionShape {
    /// Axis-aligned rectangle with top-left corner `(x, y)`.
    Rect {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    /// Axis-aligned ellipse given by centre and radii, in pixels.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl RegionShape {
    fn contains(&self, py: usize, px: usize) -> bool {
        match *self {
            RegionShape::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            RegionShape::Ellipse { cx, cy, rx, ry } => {
                let dx = (px as f64 + 0.5 - cx) / rx;
                let dy = (py as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn in_bounds(&self, height: usize, width: usize) -> bool {
        match *self {
            RegionShape::Rect { x, y, w, h } => w > 0 && h > 0 && x + w <= width && y + h <= height,
            RegionShape::Ellipse { cx, cy, rx, ry } => {
                rx > 0.0
                    && ry > 0.0
                    && cx - rx >= 0.0
                    && cy - ry >= 0.0
                    && cx + rx <= width as f64
                    && cy + ry <= height as f64
            }
        }
    }

    /// Binary mask of covered pixels.
    pub fn mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width)
            .map(|i| self.contains(i / width, i % width))
            .collect()
    }
}

/// Background level everywhere except region interiors; later regions
/// overwrite earlier ones.
pub fn compose_region_map(
    height: usize,
    width: usize,
    background: f64,
    regions: &[(RegionShape, f64)],
) -> Result<QualityMap> {
    let mut map = uniform_map(height, width, background)?;
    for (i, (shape, level)) in regions.iter().enumerate() {
        if !(0.0..=1.0).contains(level) {
            return Err(invalid(format!("region {i} level {level} outside [0, 1]")));
        }
        if !shape.in_bounds(height, width) {
            return Err(invalid(format!(
                "region {i} {shape:?} exceeds {height}x{width} frame"
            )));
        }
        for y in 0..height {
            for x in 0..width {
                if shape.contains(y, x) {
                    map.values[y * width + x] = *level;
                }
            }
        }
    }
    Ok(map)
}

/// Centred rectangle covering `area_fraction` of the frame with the frame's
/// aspect ratio.
pub fn centered_rect(height: usize, width: usize, area_fraction: f64) -> RegionShape {
    let s = area_fraction.sqrt();
    let h = ((height as f64 * s).round() as usize).clamp(1, height);
    let w = ((width as f64 * s).round() as usize).clamp(1, width);
    RegionShape::Rect {
        x: (width - w) / 2,
        y: (height - h) / 2,
        w,
        h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let m = QualityMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let l = lambda_map(&m, DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        assert!((l.values[0] - 0.001).abs() < 1e-15);
        assert!((l.values[1] - 0.020_085_536_923_187_67).abs() < 1e-12);
        assert!((l.values[2] - 0.403_428_793_492_735_1).abs() < 1e-12);
    }

    #[test]
    fn lambda_rejects_bad_constants() {
        let m = uniform_map(2, 2, 0.3).unwrap();
        assert!(lambda_map(&m, 0.0, 6.0).is_err());
        assert!(lambda_map(&m, 0.001, f64::NAN).is_err());
    }

    #[test]
    fn map_rejects_out_of_range_and_nan() {
        assert!(QualityMap::new(1, 2, vec![0.2, 1.5]).is_err());
        assert!(QualityMap::new(1, 2, vec![0.2, f64::NAN]).is_err());
        assert!(QualityMap::new(2, 2, vec![0.2; 3]).is_err());
    }

    #[test]
    fn uniform_levels() {
        assert!(uniform_map(4, 4, 0.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(uniform_map(4, 4, 1.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        assert!(uniform_map(4, 4, 1.01).is_err());
        let levels = sweep_levels();
        assert_eq!(levels.len(), 21);
        let maps: Vec<_> = levels
            .iter()
            .map(|&l| uniform_map(2, 2, l).unwrap())
            .collect();
        for i in 0..maps.len() {
            for j in i + 1..maps.len() {
                assert_ne!(maps[i], maps[j]);
            }
        }
    }

    #[test]
    fn region_composition() {
        assert_eq!(
            compose_region_map(8, 8, 0.3, &[]).unwrap(),
            uniform_map(8, 8, 0.3).unwrap()
        );
        let full = RegionShape::Rect {
            x: 0,
            y: 0,
            w: 8,
            h: 8,
        };
        assert_eq!(
            compose_region_map(8, 8, 0.3, &[(full, 0.9)]).unwrap(),
            uniform_map(8, 8, 0.9).unwrap()
        );
        let r = RegionShape::Rect {
            x: 16,
            y: 8,
            w: 32,
            h: 16,
        };
        let m = compose_region_map(32, 64, 0.0, &[(r, 1.0)]).unwrap();
        assert!((m.mean() - (32.0 * 16.0) / (32.0 * 64.0)).abs() < 1e-12);
        let later = compose_region_map(32, 64, 0.0, &[(r, 1.0), (r, 0.4)]).unwrap();
        assert_eq!(later.get(10, 20), 0.4);
    }

    #[test]
    fn region_out_of_bounds() {
        let r = RegionShape::Rect {
            x: 60,
            y: 0,
            w: 8,
            h: 8,
        };
        assert!(compose_region_map(32, 64, 0.0, &[(r, 1.0)]).is_err());
        let e = RegionShape::Ellipse {
            cx: 4.0,
            cy: 4.0,
            rx: 5.0,
            ry: 2.0,
        };
        assert!(compose_region_map(32, 64, 0.0, &[(e, 1.0)]).is_err());
        let ok = RegionShape::Rect {
            x: 0,
            y: 0,
            w: 4,
            h: 4,
        };
        assert!(compose_region_map(32, 64, 0.0, &[(ok, 1.2)]).is_err());
    }

    #[test]
    fn centered_rect_quarter_area() {
        let r = centered_rect(64, 64, 0.25);
        assert_eq!(
            r,
            RegionShape::Rect {
                x: 16,
                y: 16,
                w: 32,
                h: 32
            }
        );
    }
}
