//! The hierarchical conditional codec.
//!
//! Level 0 sits at 1/4 of the input resolution and every further level
//! halves it again. Decoding runs top-down: each level's prior is computed
//! from its temporal buffer, the pooled quality map and the decoded coarser
//! level, and the decoded level features replace the temporal buffer for the
//! next frame. The coarsest level uses learned constant priors.

mod net;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::Mode;
pub(crate) use net::{FrameVars, Layout, Net, Source};
pub use params::{Checkpoint, CheckpointMeta, OptimizerState, ParamStore};

use crate::entropy::RateEstimate;
use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, Var};
use crate::qmap::QualityMap;
use crate::tensor::Tensor;

/// Where the quality map is fed into the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QmapConditioning {
    pub input: bool,
    pub prior: bool,
    pub synthesis: bool,
}

impl Default for QmapConditioning {
    fn default() -> Self {
        QmapConditioning {
            input: true,
            prior: true,
            synthesis: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub latent_channels: Vec<usize>,
    pub base_downsample: usize,
    pub level_downsample: usize,
    pub qmap: QmapConditioning,
    pub sigma_min: f64,
    pub omega_min: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            levels: 3,
            channels: vec![32, 64, 96],
            latent_channels: vec![16, 24, 32],
            base_downsample: 4,
            level_downsample: 2,
            qmap: QmapConditioning::default(),
            sigma_min: 0.05,
            omega_min: 1e-3,
        }
    }
}

impl CodecConfig {
    /// A two-level model small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        CodecConfig {
            levels: 2,
            channels: vec![6, 8],
            latent_channels: vec![3, 4],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return err(format!("need at least 2 levels, got {}", self.levels));
        }
        if self.channels.len() != self.levels || self.latent_channels.len() != self.levels {
            return err(format!(
                "{} levels but {} channel and {} latent channel entries",
                self.levels,
                self.channels.len(),
                self.latent_channels.len()
            ));
        }
        if self
            .channels
            .iter()
            .chain(&self.latent_channels)
            .any(|&c| c == 0)
        {
            return err("channel counts must be positive".into());
        }
        if self.base_downsample != 4 || self.level_downsample != 2 {
            return err("only base downsample 4 and level downsample 2 are supported".into());
        }
        if !(self.sigma_min > 0.0 && self.omega_min > 0.0) {
            return err("sigma_min and omega_min must be positive".into());
        }
        Ok(())
    }

    /// Downsample factor of level `l`.
    pub fn downsample(&self, l: usize) -> usize {
        self.base_downsample * self.level_downsample.pow(l as u32)
    }

    /// Inputs are padded to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        self.downsample(self.levels - 1).max(32)
    }

    pub fn padded_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad_multiple();
        (h.div_ceil(p) * p, w.div_ceil(p) * p)
    }
}

/// Per-level temporal buffers for one stream. Buffers live at the padded
/// resolution of a `height`×`width` input.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalState {
    pub buffers: Vec<Tensor>,
    pub t: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub omega: Tensor,
}

impl PriorParams {
    /// Normalized scales `σ/ω`.
    pub fn scales(&self) -> Tensor {
        self.sigma.zip_map(&self.omega, |s, o| s / o)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelLatent {
    pub yhat: Tensor,
    pub symbols: Vec<i32>,
}

/// Quantized latents, finest level first; the last level is coded with the
/// constant prior.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPyramid {
    pub levels: Vec<LevelLatent>,
}

#[derive(Clone, Debug)]
pub struct FrameEncoding {
    pub latents: LatentPyramid,
    pub priors: Vec<PriorParams>,
    /// Cropped to the input size; clamped to [0, 1] in code mode.
    pub recon: Tensor,
    pub state: TemporalState,
    pub rate: RateEstimate,
}

/// Code mode: `k = round((y − μ)/ω)`, `ŷ = k·ω + μ`.
pub fn scale_quantize(y: &[f64], omega: &[f64], mu: &[f64]) -> (Vec<f64>, Vec<i32>) {
    let k: Vec<i32> = y
        .iter()
        .zip(omega.iter().zip(mu))
        .map(|(&y, (&w, &m))| net::round_to_i32((y - m) / w))
        .collect();
    let yhat = k
        .iter()
        .zip(omega.iter().zip(mu))
        .map(|(&k, (&w, &m))| k as f64 * w + m)
        .collect();
    (yhat, k)
}

/// Train mode with noise `u`: returns the rate-path values `(y − μ)/ω + u`
/// and the distortion-path values `round((y − μ)/ω)·ω + μ`.
pub fn scale_quantize_train(
    y: &[f64],
    omega: &[f64],
    mu: &[f64],
    u: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .zip(omega.iter().zip(mu))
        .zip(u)
        .map(|((&y, (&w, &m)), &u)| {
            let s = (y - m) / w;
            (s + u, s.round() * w + m)
        })
        .unzip()
}

pub struct Codec {
    config: CodecConfig,
    layout: Layout,
    params: ParamStore,
}

fn check_frame(x: &Tensor, m: &QualityMap) -> Result<()> {
    let [n, c, h, w] = x.dims();
    if n != 1 || c != 3 {
        return Err(Error::InvalidInput(format!(
            "frame must be [1,3,H,W], got {:?}",
            x.dims()
        )));
    }
    if (m.height(), m.width()) != (h, w) {
        return Err(Error::InvalidInput(format!(
            "frame is {h}x{w} but quality map is {}x{}",
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

impl Codec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = net::build(&config, &mut rng);
        Ok(Codec {
            config,
            layout,
            params,
        })
    }

    /// Rebuilds the network of `ck.meta.config` and installs its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut codec = Codec::new(ck.meta.config.clone(), 0)?;
        if ck.params.len() != codec.params.len() {
            return Err(Error::Corrupt {
                offset: 0,
                what: format!(
                    "checkpoint has {} tensors, config needs {}",
                    ck.params.len(),
                    codec.params.len()
                ),
            });
        }
        for i in 0..ck.params.len() {
            let (want, got) = (codec.params.get(i), ck.params.get(i));
            if codec.params.name(i) != ck.params.name(i) || want.dims() != got.dims() {
                return Err(Error::Corrupt {
                    offset: 0,
                    what: format!(
                        "tensor {i}: expected {} {:?}, found {} {:?}",
                        codec.params.name(i),
                        want.dims(),
                        ck.params.name(i),
                        got.dims()
                    ),
                });
            }
        }
        codec.params = ck.params.clone();
        Ok(codec)
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                config: self.config.clone(),
                ..meta
            },
            params: self.params.clone(),
            optimizer: None,
        }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub(crate) fn net(&self) -> Net<'_> {
        Net {
            cfg: &self.config,
            layout: &self.layout,
            store: &self.params,
        }
    }

    /// Reflect-pads `[N,C,H,W]` on the bottom and right to the codec multiple.
    pub(crate) fn pad(&self, g: &mut Graph, v: Var) -> Var {
        let [_, _, h, w] = g.value(v).dims();
        let (ph, pw) = self.config.padded_dims(h, w);
        if (ph, pw) == (h, w) {
            return v;
        }
        g.pad_reflect(
            v,
            Pad {
                top: 0,
                bottom: ph - h,
                left: 0,
                right: pw - w,
            },
        )
    }

    pub fn init_temporal_state(&self, height: usize, width: usize) -> Result<TemporalState> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("empty frame size".into()));
        }
        let (ph, pw) = self.config.padded_dims(height, width);
        let mut g = Graph::new(false);
        let vars = self.net().initial_state(&mut g, 1, ph, pw);
        Ok(TemporalState {
            buffers: vars.iter().map(|&v| g.value(v).clone()).collect(),
            t: 0,
            height,
            width,
        })
    }

    fn check_state(&self, s: &TemporalState, h: usize, w: usize) -> Result<()> {
        let (ph, pw) = self.config.padded_dims(h, w);
        let ok = (s.height, s.width) == (h, w)
            && s.buffers.len() == self.config.levels
            && s.buffers.iter().enumerate().all(|(l, b)| {
                let f = self.config.downsample(l);
                b.dims() == [1, self.config.channels[l], ph / f, pw / f]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "temporal state does not match a {h}x{w} stream"
            )))
        }
    }

    fn finish(
        &self,
        g: &Graph,
        out: &FrameVars,
        state: &TemporalState,
        mode: Mode,
    ) -> (Tensor, TemporalState, Vec<PriorParams>) {
        let (h, w) = (state.height, state.width);
        let full = g.value(out.recon);
        let mut recon = Tensor::zeros([1, 3, h, w]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = full.at(0, c, y, x);
                    let i = recon.index(0, c, y, x);
                    recon.data_mut()[i] = if mode == Mode::Code {
                        v.clamp(0.0, 1.0)
                    } else {
                        v
                    };
                }
            }
        }
        let next = TemporalState {
            buffers: out.state.iter().map(|&v| g.value(v).clone()).collect(),
            t: state.t + 1,
            height: h,
            width: w,
        };
        let priors = out
            .levels
            .iter()
            .map(|l| PriorParams {
                mu: g.value(l.mu).clone(),
                sigma: g.value(l.sigma).clone(),
                omega: g.value(l.omega).clone(),
            })
            .collect();
        (recon, next, priors)
    }

    fn inputs(&self, g: &mut Graph, x: &Tensor, m: &QualityMap) -> (Var, Var) {
        let xv = g.constant(x.clone());
        let mv = g.constant(m.to_tensor());
        (self.pad(g, xv), self.pad(g, mv))
    }

    /// Encodes one frame. In code mode the returned reconstruction is exactly
    /// what [`Codec::decode_frame`] produces from the returned latents.
    pub fn encode_frame(
        &self,
        x: &Tensor,
        m: &QualityMap,
        state: &TemporalState,
        mode: Mode,
    ) -> Result<FrameEncoding> {
        check_frame(x, m)?;
        let (h, w) = (x.h(), x.w());
        self.check_state(state, h, w)?;
        let mut g = Graph::new(false);
        let (xv, mv) = self.inputs(&mut g, x, m);
        let sv: Vec<Var> = state
            .buffers
            .iter()
            .map(|b| g.constant(b.clone()))
            .collect();
        let out = self
            .net()
            .forward(&mut g, xv, mv, &sv, mode, Source::Analysis)?;
        let (recon, next, priors) = self.finish(&g, &out, state, mode);
        let latents = LatentPyramid {
            levels: out
                .levels
                .iter()
                .map(|l| LevelLatent {
                    yhat: g.value(l.yhat).clone(),
                    symbols: l.symbols.clone().unwrap_or_default(),
                })
                .collect(),
        };
        let rate = RateEstimate {
            level_bits: out
                .levels
                .iter()
                .map(|l| g.value(l.bits).data()[0])
                .collect(),
            pixels: h * w,
        };
        Ok(FrameEncoding {
            latents,
            priors,
            recon,
            state: next,
            rate,
        })
    }

    /// Decodes one frame, pulling each level's symbols from `next` once the
    /// level's normalized scales are known.
    pub fn decode_frame_with(
        &self,
        next: &mut dyn FnMut(usize, &Tensor) -> Result<Vec<i32>>,
        m: &QualityMap,
        state: &TemporalState,
    ) -> Result<(Tensor, TemporalState, Vec<PriorParams>)> {
        let (h, w) = (m.height(), m.width());
        self.check_state(state, h, w)?;
        let mut g = Graph::new(false);
        let mv = g.constant(m.to_tensor());
        let mv = self.pad(&mut g, mv);
        let (ph, pw) = self.config.padded_dims(h, w);
        let xv = g.constant(Tensor::zeros([1, 3, ph, pw]));
        let sv: Vec<Var> = state
            .buffers
            .iter()
            .map(|b| g.constant(b.clone()))
            .collect();
        let out = self
            .net()
            .forward(&mut g, xv, mv, &sv, Mode::Code, Source::Symbols(next))?;
        Ok(self.finish(&g, &out, state, Mode::Code))
    }

    pub fn decode_frame(
        &self,
        latents: &LatentPyramid,
        m: &QualityMap,
        state: &TemporalState,
    ) -> Result<(Tensor, TemporalState)> {
        if latents.levels.len() != self.config.levels {
            return Err(Error::Corrupt {
                offset: 0,
                what: format!(
                    "{} latent levels for a {}-level codec",
                    latents.levels.len(),
                    self.config.levels
                ),
            });
        }
        let mut next = |l: usize, _: &Tensor| Ok(latents.levels[l].symbols.clone());
        let (recon, state, _) = self.decode_frame_with(&mut next, m, state)?;
        Ok((recon, state))
    }
}
