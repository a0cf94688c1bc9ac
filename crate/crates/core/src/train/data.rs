//! Training and test clips: analytic moving-shape videos or numbered frames
//! on disk.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClipSource {
    Synthetic,
    /// One sub-directory per clip holding numbered image files.
    FrameDir {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipDatasetSpec {
    pub source: ClipSource,
    pub clip_len: usize,
    pub crop: usize,
    pub clip_count: usize,
    pub seed: u64,
    /// Largest per-frame displacement in pixels (synthetic only).
    #[serde(default = "default_speed")]
    pub max_speed: f64,
}

fn default_speed() -> f64 {
    1.5
}

impl ClipDatasetSpec {
    pub fn synthetic(clip_len: usize, crop: usize, clip_count: usize, seed: u64) -> Self {
        ClipDatasetSpec {
            source: ClipSource::Synthetic,
            clip_len,
            crop,
            clip_count,
            seed,
            max_speed: default_speed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 {
            return Err(Error::Config("clip length must be at least 1".into()));
        }
        if self.crop == 0 || self.crop % 32 != 0 {
            return Err(Error::Config(format!(
                "crop {} is not a positive multiple of 32",
                self.crop
            )));
        }
        if self.clip_count == 0 {
            return Err(Error::Config("dataset has no clips".into()));
        }
        if !(self.max_speed >= 0.0) {
            return Err(Error::Config("max_speed must be non-negative".into()));
        }
        Ok(())
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    tint: [f64; 3],
    waves: Vec<(f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, waves: usize, max_freq: f64) -> Self {
        let mut color = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let base = color();
        let tint = color();
        let waves = (0..waves)
            .map(|_| {
                let a = rng.gen::<f64>() * PI;
                let f = rng.gen_range(0.05..max_freq);
                (f * a.cos(), f * a.sin(), rng.gen::<f64>() * 2.0 * PI)
            })
            .collect();
        Texture { base, tint, waves }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let s: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, ph)| (fx * u + fy * v + ph).sin())
            .sum::<f64>()
            / self.waves.len().max(1) as f64;
        let t = 0.5 + 0.5 * s;
        std::array::from_fn(|c| self.base[c] * (1.0 - t) + self.tint[c] * t)
    }
}

#[derive(Clone, Debug)]
struct Shape {
    ellipse: bool,
    center: (f64, f64),
    half: (f64, f64),
    velocity: (f64, f64),
    texture: Texture,
}

impl Shape {
    /// Anti-aliased coverage at a pixel centre in frame `t`.
    fn coverage(&self, x: f64, y: f64, t: f64) -> (f64, f64, f64) {
        let cx = self.center.0 + self.velocity.0 * t;
        let cy = self.center.1 + self.velocity.1 * t;
        let (dx, dy) = (x - cx, y - cy);
        let dist = if self.ellipse {
            let r = ((dx / self.half.0).powi(2) + (dy / self.half.1).powi(2)).sqrt();
            (r - 1.0) * self.half.0.min(self.half.1)
        } else {
            (dx.abs() - self.half.0).max(dy.abs() - self.half.1)
        };
        ((0.5 - dist).clamp(0.0, 1.0), dx, dy)
    }
}

/// Deterministic clip `index` of a synthetic spec: a drifting textured
/// background and 2 to 6 rigidly translating textured shapes. Returns
/// `clip_len` frames of shape `[1,3,crop,crop]` in [0, 1].
pub fn synth_clip(spec: &ClipDatasetSpec, index: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(index as u64),
    );
    let s = spec.crop as f64;
    let speed = spec.max_speed;
    let vel = |rng: &mut ChaCha8Rng| {
        if speed > 0.0 {
            (rng.gen_range(-speed..=speed), rng.gen_range(-speed..=speed))
        } else {
            (0.0, 0.0)
        }
    };
    let background = Texture::random(&mut rng, 3, 0.25);
    let pan = vel(&mut rng);
    let pan = (pan.0 * 0.5, pan.1 * 0.5);
    let count = rng.gen_range(2..=6);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| Shape {
            ellipse: rng.gen_bool(0.5),
            center: (rng.gen_range(0.0..s), rng.gen_range(0.0..s)),
            half: (
                rng.gen_range(s / 12.0..s / 4.0),
                rng.gen_range(s / 12.0..s / 4.0),
            ),
            velocity: vel(&mut rng),
            texture: Texture::random(&mut rng, 2, 1.2),
        })
        .collect();
    let n = spec.crop;
    (0..spec.clip_len)
        .map(|t| {
            let tf = t as f64;
            let mut out = Tensor::zeros([1, 3, n, n]);
            for y in 0..n {
                for x in 0..n {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut col = background.sample(px + pan.0 * tf, py + pan.1 * tf);
                    let shade = 0.85 + 0.15 * smoothstep(0.0, s, py);
                    for c in &mut col {
                        *c *= shade;
                    }
                    for sh in &shapes {
                        let (a, dx, dy) = sh.coverage(px, py, tf);
                        if a > 0.0 {
                            let tex = sh.texture.sample(dx, dy);
                            for c in 0..3 {
                                col[c] = col[c] * (1.0 - a) + tex[c] * a;
                            }
                        }
                    }
                    for (c, v) in col.iter().enumerate() {
                        let i = out.index(0, c, y, x);
                        out.data_mut()[i] = v.clamp(0.0, 1.0);
                    }
                }
            }
            out
        })
        .collect()
}

/// Clip directories under `root`, sorted by name.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no clip directories in {}",
            root.display()
        )));
    }
    Ok(dirs)
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                matches!(
                    e.to_ascii_lowercase().as_str(),
                    "png" | "jpg" | "jpeg" | "bmp"
                )
            })
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads an RGB image as `[1,3,H,W]` in [0, 1].
pub fn load_frame(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            let i = t.index(0, c, y as usize, x as usize);
            t.data_mut()[i] = p.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

pub fn save_frame(t: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = (t.h(), t.w());
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            (t.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    img.save(path)?;
    Ok(())
}

fn crop(t: &Tensor, top: usize, left: usize, size: usize) -> Tensor {
    let mut out = Tensor::zeros([1, 3, size, size]);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let i = out.index(0, c, y, x);
                out.data_mut()[i] = t.at(0, c, top + y, left + x);
            }
        }
    }
    out
}

/// The first `clip_len` frames of clip `index` (modulo the number of clip
/// directories), cropped at a seeded position shared by all frames.
pub fn frame_dir_clip(spec: &ClipDatasetSpec, root: &Path, index: usize) -> Result<Vec<Tensor>> {
    let dirs = list_clip_dirs(root)?;
    let dir = &dirs[index % dirs.len()];
    let files = frame_files(dir)?;
    if files.len() < spec.clip_len {
        return Err(Error::Config(format!(
            "{} has {} frames, {} required",
            dir.display(),
            files.len(),
            spec.clip_len
        )));
    }
    let frames = files[..spec.clip_len]
        .iter()
        .map(|p| load_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = (frames[0].h(), frames[0].w());
    if frames.iter().any(|f| (f.h(), f.w()) != (h, w)) {
        return Err(Error::Config(format!(
            "{} mixes frame sizes",
            dir.display()
        )));
    }
    if h < spec.crop || w < spec.crop {
        return Err(Error::Config(format!(
            "{} frames are {h}x{w}, smaller than crop {}",
            dir.display(),
            spec.crop
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    let top = rng.gen_range(0..=h - spec.crop);
    let left = rng.gen_range(0..=w - spec.crop);
    Ok(frames
        .iter()
        .map(|f| crop(f, top, left, spec.crop))
        .collect())
}

/// Clip `index` of any dataset with its first `frames` frames.
pub fn load_clip(spec: &ClipDatasetSpec, index: usize, frames: usize) -> Result<Vec<Tensor>> {
    if frames > spec.clip_len {
        return Err(Error::Config(format!(
            "{frames} frames requested from clips of {}",
            spec.clip_len
        )));
    }
    let mut clip = match &spec.source {
        ClipSource::Synthetic => synth_clip(spec, index % spec.clip_count),
        ClipSource::FrameDir { path } => frame_dir_clip(spec, path, index % spec.clip_count)?,
    };
    clip.truncate(frames);
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let spec = ClipDatasetSpec::synthetic(3, 32, 4, 11);
        let a = synth_clip(&spec, 2);
        assert_eq!(a, synth_clip(&spec, 2));
        assert_ne!(a, synth_clip(&spec, 3));
        assert!(a
            .iter()
            .all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(a[0].dims(), [1, 3, 32, 32]);
    }

    #[test]
    fn zero_velocity_is_static() {
        let mut spec = ClipDatasetSpec::synthetic(4, 32, 1, 5);
        spec.max_speed = 0.0;
        let c = synth_clip(&spec, 0);
        assert!(c.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn moving_clip_changes() {
        let spec = ClipDatasetSpec::synthetic(3, 32, 1, 5);
        let c = synth_clip(&spec, 0);
        let mad = c[0].zip_map(&c[1], |a, b| (a - b).abs()).mean();
        assert!(mad > 0.0);
    }

    #[test]
    fn bad_specs() {
        assert!(ClipDatasetSpec::synthetic(0, 32, 1, 0).validate().is_err());
        assert!(ClipDatasetSpec::synthetic(2, 48, 1, 0).validate().is_err());
        let spec = ClipDatasetSpec::synthetic(2, 32, 1, 0);
        assert!(matches!(load_clip(&spec, 0, 3), Err(Error::Config(_))));
    }

    #[test]
    fn frame_directory_clips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ClipDatasetSpec::synthetic(3, 32, 1, 1);
        let clip = synth_clip(&spec, 0);
        let cd = dir.path().join("clip0");
        std::fs::create_dir(&cd).unwrap();
        for (i, f) in clip.iter().enumerate() {
            save_frame(f, &cd.join(format!("{i:04}.png"))).unwrap();
        }
        let fs_spec = ClipDatasetSpec {
            source: ClipSource::FrameDir {
                path: dir.path().to_path_buf(),
            },
            ..spec.clone()
        };
        let loaded = load_clip(&fs_spec, 0, 3).unwrap();
        for (a, b) in loaded.iter().zip(&clip) {
            assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-12);
        }
        let long = ClipDatasetSpec {
            clip_len: 5,
            ..fs_spec
        };
        assert!(matches!(load_clip(&long, 0, 5), Err(Error::Config(_))));
    }
}
