//! Constrained-random quality-map generation with temporal updates.
//!
//! A map is rendered from a [`MapScene`]: a coarse base field (smoothly
//! interpolated or near-constant) plus optional sharp shapes with constant
//! interiors. Temporal updates random-walk the scene parameters so that every
//! pixel not crossed by a moving shape boundary changes by at most `delta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QualityMap;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenConfig {
    /// Sampling weights of (smooth field, sharp shapes, near-constant).
    pub mix: [f64; 3],
    /// Inclusive range for the number of overlaid shapes.
    pub shape_count: (usize, usize),
    /// Per-frame bound on value changes away from moving boundaries.
    pub delta: f64,
    /// Cell size of the coarse base grid, in pixels.
    pub kernel: usize,
    /// Maximum per-axis shape displacement per frame, in pixels.
    pub shape_step: f64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            mix: [0.4, 0.4, 0.2],
            shape_count: (1, 3),
            delta: 0.1,
            kernel: 32,
            shape_step: 2.0,
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mix.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid(format!(
                "mix weights must be nonnegative: {:?}",
                self.mix
            )));
        }
        let s: f64 = self.mix.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mix weights sum to {s}, expected 1")));
        }
        if self.shape_count.0 > self.shape_count.1 {
            return Err(invalid("shape_count range is empty"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(invalid(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.kernel < 2 {
            return Err(invalid("kernel must be at least 2 pixels"));
        }
        if !(self.shape_step >= 0.0) {
            return Err(invalid("shape_step must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Base {
    /// Independent coarse grid values, smoothly interpolated.
    Smooth,
    /// One level with a small ripple; nodes move together.
    NearConstant,
    /// Exactly one level.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeature {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
    pub level: f64,
}

impl ShapeFeature {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.half_w;
        let dy = (y as f64 + 0.5 - self.cy) / self.half_h;
        match self.kind {
            ShapeKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// The generator's record of every feature in a map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapScene {
    pub height: usize,
    pub width: usize,
    pub base: Base,
    pub cell: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub grid: Vec<f64>,
    pub shapes: Vec<ShapeFeature>,
}

impl MapScene {
    /// Index of the topmost shape covering each pixel.
    pub fn coverage(&self) -> Vec<Option<usize>> {
        let mut cov = vec![None; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                cov[y * self.width + x] = self.shapes.iter().rposition(|s| s.contains(y, x));
            }
        }
        cov
    }

    fn base_value(&self, y: usize, x: usize) -> f64 {
        // Cosine-weighted bilinear interpolation: a convex combination of
        // the four surrounding nodes.
        let fy = y as f64 / self.cell as f64;
        let fx = x as f64 / self.cell as f64;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.grid_h - 1), (x0 + 1).min(self.grid_w - 1));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (ty, tx) = (smooth(fy - y0 as f64), smooth(fx - x0 as f64));
        let g = |r: usize, c: usize| self.grid[r * self.grid_w + c];
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let top = lerp(g(y0, x0), g(y0, x1), tx);
        let bot = lerp(g(y1, x0), g(y1, x1), tx);
        lerp(top, bot, ty).clamp(0.0, 1.0)
    }

    pub fn render(&self) -> QualityMap {
        let cov = self.coverage();
        let mut values = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                values.push(match cov[y * self.width + x] {
                    Some(i) => self.shapes[i].level,
                    None => self.base_value(y, x),
                });
            }
        }
        QualityMap::new(self.height, self.width, values).expect("rendered values lie in [0, 1]")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMap {
    pub map: QualityMap,
    pub scene: MapScene,
}

fn pick_base(rng: &mut ChaCha8Rng, cfg: &MapGenConfig) -> Base {
    let (smooth, constant) = (cfg.mix[0], cfg.mix[2]);
    if smooth + constant <= 0.0 {
        return Base::Constant;
    }
    if rng.gen::<f64>() * (smooth + constant) < smooth {
        Base::Smooth
    } else {
        Base::NearConstant
    }
}

const RIPPLE: f64 = 0.02;
const MIN_CONTRAST: f64 = 0.25;

pub fn generate_initial_map(
    height: usize,
    width: usize,
    cfg: &MapGenConfig,
    seed: u64,
) -> Result<GeneratedMap> {
    if height < 16 || width < 16 {
        return Err(invalid(format!("map size {height}x{width} below 16x16")));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = pick_base(&mut rng, cfg);
    let cell = cfg.kernel;
    let grid_h = height.div_ceil(cell) + 1;
    let grid_w = width.div_ceil(cell) + 1;
    let n = grid_h * grid_w;
    let grid: Vec<f64> = match base {
        Base::Smooth => (0..n).map(|_| rng.gen::<f64>()).collect(),
        Base::NearConstant => {
            let level = rng.gen_range(RIPPLE..=1.0 - RIPPLE);
            (0..n)
                .map(|_| level + rng.gen_range(-RIPPLE..=RIPPLE))
                .collect()
        }
        Base::Constant => vec![rng.gen::<f64>(); n],
    };
    let base_mean = grid.iter().sum::<f64>() / n as f64;

    let with_shapes = cfg.mix[1] > 0.0 && rng.gen::<f64>() < cfg.mix[1];
    let mut shapes = Vec::new();
    if with_shapes {
        let count = rng.gen_range(cfg.shape_count.0..=cfg.shape_count.1);
        for _ in 0..count {
            let kind = if rng.gen::<bool>() {
                ShapeKind::Rect
            } else {
                ShapeKind::Ellipse
            };
            let half_w = rng.gen_range(width as f64 / 10.0..=width as f64 / 3.0);
            let half_h = rng.gen_range(height as f64 / 10.0..=height as f64 / 3.0);
            let cx = rng.gen_range(0.0..width as f64);
            let cy = rng.gen_range(0.0..height as f64);
            // Keep interiors distinguishable from the background.
            let level = loop {
                let l = rng.gen::<f64>();
                if (l - base_mean).abs() >= MIN_CONTRAST {
                    break l;
                }
            };
            shapes.push(ShapeFeature {
                kind,
                cx,
                cy,
                half_w,
                half_h,
                level,
            });
        }
    }
    let scene = MapScene {
        height,
        width,
        base,
        cell,
        grid_h,
        grid_w,
        grid,
        shapes,
    };
    Ok(GeneratedMap {
        map: scene.render(),
        scene,
    })
}

fn step(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Random-walk every scene parameter one frame forward.
pub fn update_map(prev: &GeneratedMap, cfg: &MapGenConfig, seed: u64) -> Result<GeneratedMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = prev.scene.clone();
    let d = cfg.delta;
    match scene.base {
        Base::Smooth => {
            for v in scene.grid.iter_mut() {
                *v = (*v + step(&mut rng, d)).clamp(0.0, 1.0);
            }
        }
        Base::NearConstant | Base::Constant => {
            let s = step(&mut rng, d);
            for v in scene.grid.iter_mut() {
                *v = (*v + s).clamp(0.0, 1.0);
            }
        }
    }
    let (w, h) = (scene.width as f64, scene.height as f64);
    for shape in scene.shapes.iter_mut() {
        shape.cx = (shape.cx + step(&mut rng, cfg.shape_step)).clamp(0.0, w);
        shape.cy = (shape.cy + step(&mut rng, cfg.shape_step)).clamp(0.0, h);
        shape.level = (shape.level + step(&mut rng, d)).clamp(0.0, 1.0);
    }
    Ok(GeneratedMap {
        map: scene.render(),
        scene,
    })
}

/// Pixels whose covering feature differs between two scenes.
pub fn boundary_crossings(prev: &MapScene, next: &MapScene) -> Vec<bool> {
    prev.coverage()
        .into_iter()
        .zip(next.coverage())
        .map(|(a, b)| a != b)
        .collect()
}

/// A map sequence of `frames` maps: one initial draw then temporal updates.
pub fn generate_sequence(
    height: usize,
    width: usize,
    cfg: &MapGenConfig,
    seed: u64,
    frames: usize,
) -> Result<Vec<GeneratedMap>> {
    let mut out: Vec<GeneratedMap> = Vec::with_capacity(frames);
    for t in 0..frames {
        let next = match out.last() {
            None => generate_initial_map(height, width, cfg, seed)?,
            Some(prev) => update_map(prev, cfg, seed.wrapping_add(0x9E37_79B9 * t as u64))?,
        };
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn cfg(mix: [f64; 3]) -> MapGenConfig {
        MapGenConfig {
            mix,
            ..Default::default()
        }
    }

    #[test]
    fn constant_only_is_nearly_flat() {
        for seed in 0..20 {
            let g = generate_initial_map(64, 48, &cfg([0.0, 0.0, 1.0]), seed).unwrap();
            assert!(g.map.max() - g.map.min() <= 0.05, "seed {seed}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let c = MapGenConfig::default();
        let a = generate_initial_map(64, 64, &c, 11).unwrap();
        let b = generate_initial_map(64, 64, &c, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            update_map(&a, &c, 5).unwrap(),
            update_map(&b, &c, 5).unwrap()
        );
        assert_ne!(a.map, generate_initial_map(64, 64, &c, 12).unwrap().map);
    }

    #[test]
    fn single_shape_gives_two_levels() {
        let mut c = cfg([0.0, 1.0, 0.0]);
        c.shape_count = (1, 1);
        for seed in 0..20 {
            let g = generate_initial_map(64, 64, &c, seed).unwrap();
            assert_eq!(g.scene.shapes.len(), 1);
            let distinct: BTreeSet<u64> = g.map.values().iter().map(|v| v.to_bits()).collect();
            let shape_level = g.scene.shapes[0].level;
            let bg = g.scene.grid[0];
            let expected: BTreeSet<u64> = [shape_level.to_bits(), bg.to_bits()].into();
            assert_eq!(distinct, expected, "seed {seed}");
        }
    }

    #[test]
    fn zero_step_update_is_identity() {
        let mut c = MapGenConfig::default();
        let g = generate_initial_map(64, 64, &c, 3).unwrap();
        c.delta = 0.0;
        c.shape_step = 0.0;
        assert_eq!(update_map(&g, &c, 9).unwrap().map, g.map);
    }

    #[test]
    fn constant_sequence_stays_constant_within_delta() {
        let c = cfg([0.0, 0.0, 1.0]);
        let seq = generate_sequence(32, 32, &c, 1, 6).unwrap();
        for pair in seq.windows(2) {
            let d: Vec<f64> = pair[0]
                .map
                .values()
                .iter()
                .zip(pair[1].map.values())
                .map(|(a, b)| b - a)
                .collect();
            let spread = d.iter().cloned().fold(f64::MIN, f64::max)
                - d.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 1e-12);
            assert!(d[0].abs() <= c.delta + 1e-12);
            assert!(pair[1].map.max() - pair[1].map.min() <= 0.05);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_initial_map(64, 64, &cfg([0.5, 0.5, 0.5]), 0).is_err());
        assert!(generate_initial_map(64, 64, &cfg([-0.5, 1.0, 0.5]), 0).is_err());
        assert!(generate_initial_map(8, 64, &MapGenConfig::default(), 0).is_err());
    }
}
