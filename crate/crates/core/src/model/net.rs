//! Network definition and the shared top-down pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use super::CodecConfig;
use crate::entropy::{clamp_symbol, symbol_bits};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct LevelLayout {
    analysis_a: Conv,
    analysis_b: Conv,
    up: Option<Conv>,
    enc_a: Conv,
    enc_b: Conv,
    prior_a: Option<Conv>,
    prior_b: Option<Conv>,
    top_prior: Option<[usize; 3]>,
    dec_a: Conv,
    dec_b: Conv,
    temporal_bias: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    levels: Vec<LevelLayout>,
    synth_a: Conv,
    synth_b: Conv,
}

/// Inverse of softplus, for initializing positive outputs.
fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

impl Init<'_> {
    fn conv(
        &mut self,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Conv {
        let w = self.conv_weight(name, co, ci, k, gain);
        let b = self.vector(&format!("{name}.bias"), co, 0.0);
        Conv {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }
}

/// Registers every parameter of `cfg` in a fixed order.
pub(crate) fn build(cfg: &CodecConfig, rng: &mut ChaCha8Rng) -> (Layout, ParamStore) {
    let mut init = Init {
        store: ParamStore::default(),
        rng,
    };
    let q = |on: bool| on as usize;
    let gain = 1.6;
    let n = cfg.levels;
    let mut levels = Vec::with_capacity(n);
    for l in 0..n {
        let c = cfg.channels[l];
        let z = cfg.latent_channels[l];
        let top = l + 1 == n;
        let p = format!("level{l}");
        let (analysis_a, analysis_b) = if l == 0 {
            let ci = 3 + q(cfg.qmap.input);
            (
                init.conv(&format!("{p}.analysis_a"), ci, c, 5, 2, gain),
                init.conv(&format!("{p}.analysis_b"), c, c, 3, 2, 1.0),
            )
        } else {
            (
                init.conv(
                    &format!("{p}.analysis_a"),
                    cfg.channels[l - 1],
                    c,
                    3,
                    2,
                    gain,
                ),
                init.conv(&format!("{p}.analysis_b"), c, c, 3, 1, 1.0),
            )
        };
        let up = (!top).then(|| init.conv(&format!("{p}.up"), cfg.channels[l + 1], c, 3, 1, gain));
        let ctx = c + q(cfg.qmap.prior) + if top { 0 } else { c };
        let enc_a = init.conv(&format!("{p}.enc_a"), c + ctx, c, 3, 1, gain);
        let enc_b = init.conv(&format!("{p}.enc_b"), c, z, 1, 1, 1.0);
        let (prior_a, prior_b, top_prior) = if top {
            let ids = [
                init.vector(&format!("{p}.prior.mu"), z, 0.0),
                init.jittered(&format!("{p}.prior.sigma"), z, softplus_inv(1.0), 0.1),
                init.vector(&format!("{p}.prior.omega"), z, softplus_inv(1.0)),
            ];
            (None, None, Some(ids))
        } else {
            let a = init.conv(&format!("{p}.prior_a"), ctx, c, 3, 1, gain);
            let b = init.conv(&format!("{p}.prior_b"), c, 3 * z, 1, 1, 0.1);
            // Start with sigma and omega near 1.
            let bias = init.store.get_mut(b.b);
            for i in 0..z {
                bias.data_mut()[z + i] = softplus_inv(1.0);
                bias.data_mut()[2 * z + i] = softplus_inv(1.0);
            }
            (Some(a), Some(b), None)
        };
        let dec_a = init.conv(&format!("{p}.dec_a"), z + ctx, c, 3, 1, gain);
        let dec_b = init.conv(&format!("{p}.dec_b"), c, c, 3, 1, 0.5);
        let temporal_bias = init.vector(&format!("{p}.temporal_bias"), c, 0.0);
        levels.push(LevelLayout {
            analysis_a,
            analysis_b,
            up,
            enc_a,
            enc_b,
            prior_a,
            prior_b,
            top_prior,
            dec_a,
            dec_b,
            temporal_bias,
        });
    }
    let c0 = cfg.channels[0];
    let synth_a = init.conv("synth_a", c0, c0, 3, 1, gain);
    let synth_b = init.conv("synth_b", c0 + q(cfg.qmap.synthesis), 3, 3, 1, 0.5);
    (
        Layout {
            levels,
            synth_a,
            synth_b,
        },
        init.store,
    )
}

/// How latents are quantized in a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Uniform noise for the rate term, straight-through rounding for the
    /// reconstruction. The noise is drawn from `seed`.
    Train { seed: u64 },
    /// Uniform noise for both terms; a smooth function of every input.
    Relaxed { seed: u64 },
    /// Hard rounding; symbols are what the range coder sees.
    Code,
}

/// Where latents come from.
pub(crate) enum Source<'a> {
    Analysis,
    /// Symbols for level `l` given the normalized scales of that level.
    Symbols(&'a mut dyn FnMut(usize, &Tensor) -> Result<Vec<i32>>),
}

pub(crate) struct LevelVars {
    pub mu: Var,
    pub sigma: Var,
    pub omega: Var,
    pub yhat: Var,
    /// Estimated bits of the whole level, a scalar.
    pub bits: Var,
    pub symbols: Option<Vec<i32>>,
}

pub(crate) struct FrameVars {
    /// Index 0 is the finest level.
    pub levels: Vec<LevelVars>,
    /// Reconstruction at padded size, before clamping.
    pub recon: Var,
    pub state: Vec<Var>,
}

pub(crate) struct Net<'a> {
    pub cfg: &'a CodecConfig,
    pub layout: &'a Layout,
    pub store: &'a ParamStore,
}

fn noise(dims: [usize; 4], seed: u64, level: usize) -> Tensor {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
}

/// `k·ω + μ`, the one dequantization rule used on both sides.
pub(crate) fn dequantize(k: &[i32], omega: &Tensor, mu: &Tensor) -> Tensor {
    let data = k
        .iter()
        .zip(omega.data().iter().zip(mu.data()))
        .map(|(&k, (&w, &m))| k as f64 * w + m)
        .collect();
    Tensor::from_vec(omega.dims(), data)
}

impl Net<'_> {
    fn p(&self, g: &mut Graph, idx: usize) -> Var {
        g.param(idx, self.store.get(idx))
    }

    fn conv(&self, g: &mut Graph, c: Conv, x: Var) -> Var {
        let w = self.p(g, c.w);
        let b = self.p(g, c.b);
        g.conv2d(x, w, b, c.stride, c.pad)
    }

    fn conv_silu(&self, g: &mut Graph, c: Conv, x: Var) -> Var {
        let y = self.conv(g, c, x);
        g.silu(y)
    }

    /// Learned initial buffers broadcast to batch `n` and padded size `h`×`w`.
    pub fn initial_state(&self, g: &mut Graph, n: usize, h: usize, w: usize) -> Vec<Var> {
        (0..self.cfg.levels)
            .map(|l| {
                let f = self.cfg.downsample(l);
                let b = self.p(g, self.layout.levels[l].temporal_bias);
                g.bcast_channels(b, n, h / f, w / f)
            })
            .collect()
    }

    fn positive(&self, g: &mut Graph, raw: Var, floor: f64) -> Var {
        let s = g.softplus(raw);
        g.offset(s, floor)
    }

    /// One frame through the codec. `x` is `[N,3,H,W]` and `m` `[N,1,H,W]`,
    /// both padded to a multiple of the total downsample.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        m: Var,
        state: &[Var],
        mode: Mode,
        mut source: Source<'_>,
    ) -> Result<FrameVars> {
        let cfg = self.cfg;
        let lay = self.layout;
        let [n, _, h, w] = g.value(x).dims();
        let nl = cfg.levels;

        let analysis = match source {
            Source::Analysis => {
                let xc = g.offset(x, -0.5);
                let mut cur = if cfg.qmap.input {
                    g.concat(&[xc, m])
                } else {
                    xc
                };
                let mut feats = Vec::with_capacity(nl);
                for ll in &lay.levels {
                    let a = self.conv_silu(g, ll.analysis_a, cur);
                    cur = self.conv_silu(g, ll.analysis_b, a);
                    feats.push(cur);
                }
                Some(feats)
            }
            Source::Symbols(_) => None,
        };

        let mut levels: Vec<Option<LevelVars>> = (0..nl).map(|_| None).collect();
        let mut new_state = vec![None; nl];
        let mut coarser: Option<Var> = None;
        for l in (0..nl).rev() {
            let ll = &lay.levels[l];
            let f = cfg.downsample(l);
            let (lh, lw) = (h / f, w / f);
            let mut ctx_parts = vec![state[l]];
            if cfg.qmap.prior {
                ctx_parts.push(g.avg_pool(m, f));
            }
            if let (Some(d), Some(up)) = (coarser, ll.up) {
                let u = g.upsample2(d);
                ctx_parts.push(self.conv_silu(g, up, u));
            }
            let ctx = if ctx_parts.len() == 1 {
                ctx_parts[0]
            } else {
                g.concat(&ctx_parts)
            };

            let z = cfg.latent_channels[l];
            let (mu, sigma, omega) = match ll.top_prior {
                Some([pm, ps, po]) => {
                    let (mu, s, o) = (self.p(g, pm), self.p(g, ps), self.p(g, po));
                    let mu = g.bcast_channels(mu, n, lh, lw);
                    let s = g.bcast_channels(s, n, lh, lw);
                    let o = g.bcast_channels(o, n, lh, lw);
                    (
                        mu,
                        self.positive(g, s, cfg.sigma_min),
                        self.positive(g, o, cfg.omega_min),
                    )
                }
                None => {
                    let hdn = self.conv_silu(g, ll.prior_a.expect("prior"), ctx);
                    let raw = self.conv(g, ll.prior_b.expect("prior"), hdn);
                    let mu = g.slice_channels(raw, 0, z);
                    let s = g.slice_channels(raw, z, z);
                    let o = g.slice_channels(raw, 2 * z, z);
                    (
                        mu,
                        self.positive(g, s, cfg.sigma_min),
                        self.positive(g, o, cfg.omega_min),
                    )
                }
            };
            let st = g.div(sigma, omega);

            let (yhat, bits, symbols) = match (&mut source, &analysis) {
                (Source::Analysis, Some(feats)) => {
                    let e_in = g.concat(&[feats[l], ctx]);
                    let e = self.conv_silu(g, ll.enc_a, e_in);
                    let y = self.conv(g, ll.enc_b, e);
                    let centered = g.sub(y, mu);
                    let s = g.div(centered, omega);
                    match mode {
                        Mode::Train { seed } | Mode::Relaxed { seed } => {
                            let u = g.constant(noise(g.value(s).dims(), seed, l));
                            let noisy = g.add(s, u);
                            let bm = g.gauss_bits(noisy, st);
                            let bits = g.sum(bm);
                            let q = if matches!(mode, Mode::Train { .. }) {
                                g.round_ste(s)
                            } else {
                                noisy
                            };
                            let scaled = g.mul(q, omega);
                            let yhat = g.add(scaled, mu);
                            (yhat, bits, None)
                        }
                        Mode::Code => {
                            let k: Vec<i32> = g
                                .value(s)
                                .data()
                                .iter()
                                .zip(g.value(st).data())
                                .map(|(&v, &t)| clamp_symbol(round_to_i32(v), t))
                                .collect();
                            self.code_level(g, k, mu, omega, st)
                        }
                    }
                }
                (Source::Symbols(next), _) => {
                    if mode != Mode::Code {
                        return Err(Error::InvalidInput(
                            "symbol source requires code mode".into(),
                        ));
                    }
                    let k = next(l, g.value(st))?;
                    if k.len() != g.value(st).len() {
                        return Err(Error::Corrupt {
                            offset: 0,
                            what: format!(
                                "level {l}: {} symbols for a latent of {}",
                                k.len(),
                                g.value(st).len()
                            ),
                        });
                    }
                    self.code_level(g, k, mu, omega, st)
                }
                _ => unreachable!("analysis features exist for the analysis source"),
            };

            let d_in = g.concat(&[yhat, ctx]);
            let hdn = self.conv_silu(g, ll.dec_a, d_in);
            let res = self.conv(g, ll.dec_b, hdn);
            let d = g.add(hdn, res);
            new_state[l] = Some(d);
            coarser = Some(d);
            levels[l] = Some(LevelVars {
                mu,
                sigma,
                omega,
                yhat,
                bits,
                symbols,
            });
        }

        let d0 = coarser.expect("at least one level");
        let u = g.upsample2(d0);
        let s = self.conv_silu(g, lay.synth_a, u);
        let u = g.upsample2(s);
        let u = if cfg.qmap.synthesis {
            g.concat(&[u, m])
        } else {
            u
        };
        let r = self.conv(g, lay.synth_b, u);
        let recon = g.offset(r, 0.5);

        Ok(FrameVars {
            levels: levels.into_iter().map(|l| l.expect("filled")).collect(),
            recon,
            state: new_state.into_iter().map(|s| s.expect("filled")).collect(),
        })
    }

    fn code_level(
        &self,
        g: &mut Graph,
        k: Vec<i32>,
        mu: Var,
        omega: Var,
        st: Var,
    ) -> (Var, Var, Option<Vec<i32>>) {
        let yhat = dequantize(&k, g.value(omega), g.value(mu));
        let bits: f64 = k
            .iter()
            .zip(g.value(st).data())
            .map(|(&k, &t)| symbol_bits(k, t))
            .sum();
        let yhat = g.constant(yhat);
        let bits = g.constant(Tensor::scalar(bits));
        (yhat, bits, Some(k))
    }
}

/// Rounds half away from zero and saturates at the `i32` range.
pub(crate) fn round_to_i32(v: f64) -> i32 {
    let r = v.round();
    if r.is_nan() {
        0
    } else {
        r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
    }
}
