//! Rate-distortion training: losses, the staged multi-frame schedule,
//! clip datasets and checkpoints.

pub mod data;
pub mod loss;
pub mod optim;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{load_clip, synth_clip, ClipDatasetSpec, ClipSource};
pub use loss::{total_loss, wmse_loss, LossBreakdown, PIXEL_PEAK};
pub use optim::Adam;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Checkpoint, CheckpointMeta, Codec, CodecConfig, Mode, Source};
use crate::qmap::{generate_sequence, MapGenConfig};
use crate::tensor::Tensor;

/// Mixes integers into one well-spread seed.
pub fn seed_mix(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleStage {
    /// Global step count at which the stage ends.
    pub end_step: u64,
    /// Frames per training clip.
    pub frames: usize,
    pub dataset: String,
    /// Overrides the global learning rate during this stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    4
}
fn default_clip() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub model: CodecConfig,
    #[serde(default)]
    pub qmap: MapGenConfig,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub seed: u64,
    pub stages: Vec<ScheduleStage>,
    pub datasets: BTreeMap<String, ClipDatasetSpec>,
}

impl TrainConfig {
    /// Batches of 8 synthetic 32×32 crops: 1500 steps on 2-frame clips, then
    /// 600 steps on 4-frame clips with the learning rate annealed to 3e-4
    /// and 1e-4. About 20 minutes on one core.
    pub fn desk_default() -> Self {
        let mut datasets = BTreeMap::new();
        datasets.insert(
            "synthetic".into(),
            ClipDatasetSpec::synthetic(16, 32, 4096, 1),
        );
        let stage = |end_step, frames, lr| ScheduleStage {
            end_step,
            frames,
            dataset: "synthetic".into(),
            lr,
        };
        TrainConfig {
            model: CodecConfig::default(),
            qmap: MapGenConfig::default(),
            lr: default_lr(),
            batch: 8,
            grad_clip: default_clip(),
            seed: 0,
            stages: vec![
                stage(1500, 2, None),
                stage(1900, 4, Some(3e-4)),
                stage(2100, 4, Some(1e-4)),
            ],
            datasets,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.qmap.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("schedule has no stages".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch == 0 {
            return Err(Error::Config(
                "lr must be finite and >= 0, batch >= 1".into(),
            ));
        }
        for w in self.stages.windows(2) {
            if w[1].end_step <= w[0].end_step {
                return Err(Error::Config("stage end steps must increase".into()));
            }
            if w[1].frames < w[0].frames {
                return Err(Error::Config("stage frame counts must not decrease".into()));
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            let ds = self.datasets.get(&s.dataset).ok_or_else(|| {
                Error::Config(format!("stage {i} uses unknown dataset {:?}", s.dataset))
            })?;
            ds.validate()?;
            if s.lr.is_some_and(|lr| !(lr >= 0.0 && lr.is_finite())) {
                return Err(Error::Config(format!(
                    "stage {i} lr must be finite and >= 0"
                )));
            }
            if s.frames == 0 {
                return Err(Error::Config(format!("stage {i} has zero frames")));
            }
            if ds.clip_len < s.frames {
                return Err(Error::Config(format!(
                    "stage {i} needs {} frames but dataset {:?} clips have {}",
                    s.frames, s.dataset, ds.clip_len
                )));
            }
            if let ClipSource::FrameDir { path } = &ds.source {
                if !path.is_dir() {
                    return Err(Error::Config(format!(
                        "{} is not a directory",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Graph of a clip's mean per-frame loss.
pub(crate) struct ClipGraph {
    pub g: Graph,
    pub loss: Var,
    pub maps: Vec<Var>,
    pub rate: f64,
    pub wmse: f64,
    pub level_bpp: Vec<f64>,
}

/// Builds the loss of a clip. `frames[t]` is `[N,3,H,W]`, `maps[t]` is
/// `[N,1,H,W]`. Temporal state flows through the whole clip.
pub(crate) fn clip_loss(
    codec: &Codec,
    frames: &[Tensor],
    maps: &[Tensor],
    mode: impl Fn(usize) -> Mode,
    track_params: bool,
    maps_variable: bool,
) -> Result<ClipGraph> {
    if frames.is_empty() || frames.len() != maps.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames and {} maps",
            frames.len(),
            maps.len()
        )));
    }
    let [n, _, h, w] = frames[0].dims();
    for (f, m) in frames.iter().zip(maps) {
        if f.dims() != [n, 3, h, w] || m.dims() != [n, 1, h, w] {
            return Err(Error::InvalidInput(
                "clip frame or map shape mismatch".into(),
            ));
        }
    }
    let (ph, pw) = codec.config().padded_dims(h, w);
    let mut g = Graph::new(track_params);
    let net = codec.net();
    let mut state = net.initial_state(&mut g, n, ph, pw);
    let pixels = (n * h * w) as f64;
    let levels = codec.config().levels;
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut map_vars = Vec::with_capacity(frames.len());
    let (mut rate, mut wmse) = (0.0, 0.0);
    let mut level_bpp = vec![0.0; levels];
    for (t, (f, m)) in frames.iter().zip(maps).enumerate() {
        let x = g.constant(f.clone());
        let mv = if maps_variable {
            g.variable(m.clone())
        } else {
            g.constant(m.clone())
        };
        map_vars.push(mv);
        let xp = codec.pad(&mut g, x);
        let mp = codec.pad(&mut g, mv);
        let out = net.forward(&mut g, xp, mp, &state, mode(t), Source::Analysis)?;
        let recon = if (ph, pw) == (h, w) {
            out.recon
        } else {
            g.crop(out.recon, h, w)
        };
        let lam = loss::lambda_var(&mut g, mv);
        let dist = loss::wmse_var(&mut g, x, recon, lam);
        let mut bits = out.levels[0].bits;
        for (l, lv) in out.levels.iter().enumerate() {
            let b = g.value(lv.bits).data()[0] / pixels;
            level_bpp[l] += b / frames.len() as f64;
            rate += b / frames.len() as f64;
            if l > 0 {
                bits = g.add(bits, lv.bits);
            }
        }
        wmse += g.value(dist).data()[0] / frames.len() as f64;
        let bpp = g.scale(bits, 1.0 / pixels);
        per_frame.push(g.add(bpp, dist));
        state = out.state;
    }
    let mut total = per_frame[0];
    for &p in &per_frame[1..] {
        total = g.add(total, p);
    }
    let loss = g.scale(total, 1.0 / frames.len() as f64);
    Ok(ClipGraph {
        g,
        loss,
        maps: map_vars,
        rate,
        wmse,
        level_bpp,
    })
}

/// Clip loss together with its gradients.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: LossBreakdown,
    /// Indexed like the parameter store; `None` for unused parameters.
    pub params: Vec<Option<Tensor>>,
    /// One `[N,1,H,W]` gradient per frame's quality map.
    pub maps: Vec<Tensor>,
}

/// Mean per-frame loss of a clip. `frames[t]` is `[N,3,H,W]` and
/// `maps[t]` is `[N,1,H,W]`.
pub fn clip_loss_value(
    codec: &Codec,
    frames: &[Tensor],
    maps: &[Tensor],
    mode: Mode,
) -> Result<LossBreakdown> {
    let cg = clip_loss(codec, frames, maps, |_| mode, false, false)?;
    Ok(LossBreakdown {
        rate: cg.rate,
        wmse: cg.wmse,
        total: cg.g.value(cg.loss).data()[0],
    })
}

/// Like [`clip_loss_value`], with gradients for every parameter and map.
pub fn loss_and_gradients(
    codec: &Codec,
    frames: &[Tensor],
    maps: &[Tensor],
    mode: Mode,
) -> Result<LossGradients> {
    let cg = clip_loss(codec, frames, maps, |_| mode, true, true)?;
    let grads = cg.g.backward(cg.loss);
    let mut params = vec![None; codec.params().len()];
    for (i, t) in grads.params() {
        params[i] = Some(t.clone());
    }
    let map_grads = cg
        .maps
        .iter()
        .zip(maps)
        .map(|(&v, m)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(m.dims()))
        })
        .collect();
    Ok(LossGradients {
        loss: LossBreakdown {
            rate: cg.rate,
            wmse: cg.wmse,
            total: cg.g.value(cg.loss).data()[0],
        },
        params,
        maps: map_grads,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub stage: usize,
    pub loss: LossBreakdown,
    pub level_bpp: Vec<f64>,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub codec: Codec,
    pub adam: Adam,
    pub config: TrainConfig,
    pub step: u64,
    pub stage_frames: Vec<usize>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let codec = Codec::new(config.model.clone(), seed_mix(&[config.seed, 1]))?;
        let adam = Adam::new(codec.params(), config.lr, config.grad_clip);
        Ok(Trainer {
            codec,
            adam,
            config,
            step: 0,
            stage_frames: Vec::new(),
        })
    }

    /// Continues from a stage-end checkpoint saved by [`Trainer::run`].
    pub fn resume(config: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.meta.config != config.model {
            return Err(Error::Config(
                "checkpoint model config differs from training config".into(),
            ));
        }
        let codec = Codec::from_checkpoint(ck)?;
        let mut adam = Adam::new(codec.params(), config.lr, config.grad_clip);
        if let Some(o) = &ck.optimizer {
            if o.m.len() != codec.params().len() {
                return Err(Error::Corrupt {
                    offset: 0,
                    what: "optimizer state does not match parameters".into(),
                });
            }
            adam.state = o.clone();
        }
        Ok(Trainer {
            codec,
            adam,
            config,
            step: ck.meta.step,
            stage_frames: ck.meta.stage_frames.clone(),
        })
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let mut ck = self.codec.to_checkpoint(CheckpointMeta {
            stage_frames: self.stage_frames.clone(),
            step: self.step,
            seed: self.config.seed,
            ..Default::default()
        });
        if with_optimizer {
            ck.optimizer = Some(self.adam.state.clone());
        }
        ck
    }

    /// Training batch for global step `step`: per frame, `[B,3,S,S]` frames
    /// and `[B,1,S,S]` quality maps from the map generator.
    pub fn batch(&self, step: u64, stage: usize) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let st = &self.config.stages[stage];
        let spec = &self.config.datasets[&st.dataset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(&[self.config.seed, 2, step]));
        let mut clips = Vec::with_capacity(self.config.batch);
        let mut maps = Vec::with_capacity(self.config.batch);
        for b in 0..self.config.batch {
            let idx = rng.gen_range(0..spec.clip_count);
            clips.push(load_clip(spec, idx, st.frames)?);
            let seq = generate_sequence(
                spec.crop,
                spec.crop,
                &self.config.qmap,
                seed_mix(&[self.config.seed, 3, step, b as u64]),
                st.frames,
            )?;
            maps.push(
                seq.into_iter()
                    .map(|g| g.map.to_tensor())
                    .collect::<Vec<_>>(),
            );
        }
        let frames = (0..st.frames)
            .map(|t| Tensor::stack(&clips.iter().map(|c| c[t].clone()).collect::<Vec<_>>()))
            .collect();
        let maps = (0..st.frames)
            .map(|t| Tensor::stack(&maps.iter().map(|c| c[t].clone()).collect::<Vec<_>>()))
            .collect();
        Ok((frames, maps))
    }

    /// Forward and backward through the clip, then one optimizer update.
    pub fn training_step(
        &mut self,
        frames: &[Tensor],
        maps: &[Tensor],
        stage: usize,
    ) -> Result<StepReport> {
        let step = self.step;
        let seed = self.config.seed;
        let cg = clip_loss(
            &self.codec,
            frames,
            maps,
            |t| Mode::Train {
                seed: seed_mix(&[seed, 4, step, t as u64]),
            },
            true,
            false,
        )?;
        let total = cg.g.value(cg.loss).data()[0];
        let report = StepReport {
            step,
            stage,
            loss: LossBreakdown {
                rate: cg.rate,
                wmse: cg.wmse,
                total,
            },
            level_bpp: cg.level_bpp.clone(),
            grad_norm: 0.0,
        };
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {total} at step {step}, stage {stage}, level bpp {:?}, wmse {}",
                report.level_bpp, report.loss.wmse
            )));
        }
        let grads = cg.g.backward(cg.loss);
        let mut per_param: Vec<Option<Tensor>> = vec![None; self.codec.params().len()];
        for (i, gr) in grads.params() {
            if !gr.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at step {step}, stage {stage}, level bpp {:?}",
                    self.codec.params().name(i),
                    report.level_bpp
                )));
            }
            per_param[i] = Some(gr.clone());
        }
        let grad_norm = self.adam.step(self.codec.params_mut(), &per_param);
        self.step += 1;
        Ok(StepReport {
            grad_norm,
            ..report
        })
    }

    /// Runs the remaining stages, writing `stage<i>.ckpt` into `out_dir`
    /// after each stage and one CSV row per step to `log`.
    pub fn run(
        &mut self,
        out_dir: &Path,
        mut log: Option<&mut csv::Writer<File>>,
        mut progress: impl FnMut(&StepReport),
    ) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        if let Some(w) = log.as_deref_mut() {
            w.write_record([
                "step",
                "stage",
                "frames",
                "bpp",
                "wmse",
                "total",
                "grad_norm",
                "seconds",
            ])
            .map_err(csv_err)?;
        }
        let t0 = Instant::now();
        let mut saved = Vec::new();
        for stage in self.stage_frames.len()..self.config.stages.len() {
            let st = self.config.stages[stage].clone();
            self.adam.lr = st.lr.unwrap_or(self.config.lr);
            while self.step < st.end_step {
                let (frames, maps) = self.batch(self.step, stage)?;
                let r = self.training_step(&frames, &maps, stage)?;
                if let Some(w) = log.as_deref_mut() {
                    w.write_record([
                        r.step.to_string(),
                        stage.to_string(),
                        st.frames.to_string(),
                        format!("{:.6}", r.loss.rate),
                        format!("{:.6}", r.loss.wmse),
                        format!("{:.6}", r.loss.total),
                        format!("{:.4}", r.grad_norm),
                        format!("{:.2}", t0.elapsed().as_secs_f64()),
                    ])
                    .map_err(csv_err)?;
                    w.flush()?;
                }
                progress(&r);
            }
            self.stage_frames.push(st.frames);
            let path = out_dir.join(format!("stage{}.ckpt", stage + 1));
            self.checkpoint(true).save(&path)?;
            saved.push(path);
        }
        Ok(saved)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
