use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Resample};
use crate::model::{Codec, Mode, Source};
use crate::qmap::{
    grid_dims, level_of_lambda, sweep_levels, upsample_grid, QualityMap, DEFAULT_ALPHA,
    DEFAULT_BETA, SIGNAL_FACTOR,
};
use crate::stream::{encode_sequence, StreamOptions};
use crate::tensor::Tensor;
use crate::train::{seed_mix, PIXEL_PEAK};

use super::metrics::squared_error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitRule {
    /// The sweep-grid level with the lowest coded objective.
    BestUniform,
    /// The level whose weight `α·e^{βm}` is closest to the target.
    NearestLambda,
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizeOptions {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub init: InitRule,
    pub stream: StreamOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            steps: 100,
            step_size: 0.02,
            seed: 0,
            init: InitRule::BestUniform,
            stream: StreamOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizedMaps {
    /// Per-frame maps as the decoder sees them.
    pub maps: Vec<QualityMap>,
    /// Coded objective of `maps`.
    pub objective: f64,
    pub init_level: f64,
    pub init_objective: f64,
    /// Coded objective after each step; entry 0 is the initialization.
    pub history: Vec<f64>,
    pub best_step: usize,
}

/// Mean over frames of coded bits per pixel (latents plus map side
/// information) plus `lambda` times the 8-bit-scale MSE.
pub fn coded_objective(
    codec: &Codec,
    frames: &[Tensor],
    maps: &[QualityMap],
    lambda: f64,
    opts: StreamOptions,
) -> Result<f64> {
    let enc = encode_sequence(codec, frames, maps, opts)?;
    let mut total = 0.0;
    for (x, f) in frames.iter().zip(&enc.frames) {
        let pixels = (x.h() * x.w()) as f64;
        let (sse, n) = squared_error(x, &f.encoding.recon, None)?;
        let bits = 8.0 * (f.latent_bytes() + f.qmap_bytes) as f64;
        total += bits / pixels + lambda * sse / n as f64;
    }
    Ok(total / frames.len() as f64)
}

/// Differentiable objective of the clip for per-frame map grids. Returns
/// the objective and its gradient for each grid.
fn relaxed_objective(
    codec: &Codec,
    frames: &[Tensor],
    grids: &[Vec<f64>],
    lambda: f64,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (h, w) = (frames[0].h(), frames[0].w());
    let (gh, gw) = grid_dims(h, w);
    let (ph, pw) = codec.config().padded_dims(h, w);
    let pixels = (h * w) as f64;
    let mut g = Graph::new(false);
    let net = codec.net();
    let mut state = net.initial_state(&mut g, 1, ph, pw);
    let mut grid_vars = Vec::with_capacity(frames.len());
    let mut total = None;
    for (t, (x, grid)) in frames.iter().zip(grids).enumerate() {
        let gv = g.variable(Tensor::from_vec([1, 1, gh, gw], grid.clone()));
        grid_vars.push(gv);
        let m = g.resample(gv, Resample::bilinear(gh, gw, h, w, SIGNAL_FACTOR));
        let xv = g.constant(x.clone());
        let xp = codec.pad(&mut g, xv);
        let mp = codec.pad(&mut g, m);
        let mode = Mode::Train {
            seed: seed_mix(&[seed, t as u64]),
        };
        let out = net.forward(&mut g, xp, mp, &state, mode, Source::Analysis)?;
        let recon = if (ph, pw) == (h, w) {
            out.recon
        } else {
            g.crop(out.recon, h, w)
        };
        let d = g.sub(xv, recon);
        let sq = g.square(d);
        let sse = g.sum(sq);
        let dist = g.scale(sse, lambda * PIXEL_PEAK * PIXEL_PEAK / (3.0 * pixels));
        let mut bits = out.levels[0].bits;
        for lv in &out.levels[1..] {
            bits = g.add(bits, lv.bits);
        }
        let rate = g.scale(bits, 1.0 / pixels);
        let frame = g.add(rate, dist);
        total = Some(match total {
            None => frame,
            Some(acc) => g.add(acc, frame),
        });
        state = out.state;
    }
    let loss = g.scale(total.expect("non-empty clip"), 1.0 / frames.len() as f64);
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss);
    let out = grid_vars
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .map_or_else(|| vec![0.0; gh * gw], |t| t.data().to_vec())
        })
        .collect();
    Ok((value, out))
}

fn maps_of(grids: &[Vec<f64>], h: usize, w: usize) -> Vec<QualityMap> {
    grids.iter().map(|g| upsample_grid(g, h, w)).collect()
}

/// Searches per-frame quality maps that lower the coded objective
/// `R + lambda·MSE` of the clip with the model frozen. Each step moves the
/// map grids against the gradient of the noise-relaxed objective, scaled so
/// the largest node moves by `step_size`, and clamps them to `[0, 1]`. The
/// best coded iterate is returned.
pub fn optimize_qmap(
    codec: &Codec,
    frames: &[Tensor],
    lambda: f64,
    opts: OptimizeOptions,
) -> Result<OptimizedMaps> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("λ target {lambda} must be positive")));
    }
    let Some(first) = frames.first() else {
        return Err(invalid("empty clip"));
    };
    let (h, w) = (first.h(), first.w());
    if frames.iter().any(|f| f.dims() != [1, 3, h, w]) {
        return Err(invalid("clip frames must share one [1,3,H,W] shape"));
    }
    let (gh, gw) = grid_dims(h, w);
    let objective = |grids: &[Vec<f64>]| {
        coded_objective(codec, frames, &maps_of(grids, h, w), lambda, opts.stream)
    };
    let uniform = |level: f64| vec![vec![level; gh * gw]; frames.len()];

    let (init_level, init_objective) = match opts.init {
        InitRule::NearestLambda => {
            let target = level_of_lambda(lambda, DEFAULT_ALPHA, DEFAULT_BETA).clamp(0.0, 1.0);
            let level = sweep_levels()
                .into_iter()
                .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
                .expect("non-empty sweep grid");
            (level, objective(&uniform(level))?)
        }
        InitRule::BestUniform => {
            let mut best = (0.0, f64::INFINITY);
            for level in sweep_levels() {
                let j = objective(&uniform(level))?;
                if j < best.1 {
                    best = (level, j);
                }
            }
            best
        }
    };

    let mut grids = uniform(init_level);
    let mut best = (grids.clone(), init_objective, 0);
    let mut history = vec![init_objective];
    for step in 1..=opts.steps {
        let (value, grad) = relaxed_objective(codec, frames, &grids, lambda, opts.seed)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "map optimization objective is {value} at step {step}"
            )));
        }
        for (grid, gr) in grids.iter_mut().zip(&grad) {
            let peak = gr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                continue;
            }
            for (v, d) in grid.iter_mut().zip(gr) {
                *v = (*v - opts.step_size * d / peak).clamp(0.0, 1.0);
            }
        }
        let j = objective(&grids)?;
        history.push(j);
        if j < best.1 {
            best = (grids.clone(), j, step);
        }
    }
    let maps = maps_of(&best.0, h, w)
        .iter()
        .map(|m| {
            if opts.stream.signal_qmap {
                crate::qmap::signal_roundtrip(m)
            } else {
                m.clone()
            }
        })
        .collect();
    Ok(OptimizedMaps {
        maps,
        objective: best.1,
        init_level,
        init_objective,
        history,
        best_step: best.2,
    })
}
