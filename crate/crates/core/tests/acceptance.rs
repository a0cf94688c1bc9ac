//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! Criteria 7, 8, 9 and 11 train the default model on synthetic clips
//! first, which takes a while on one core. Set `LRCV_ACCEPTANCE_CHECKPOINT`
//! to evaluate an existing checkpoint instead.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use lrc_core::entropy::{symbol_bits, Bitstream, CoderBackend, SymbolPlane};
use lrc_core::eval::{self, bd_rate, bit_heatmap, OptimizeOptions, RdCurve, RdPoint};
use lrc_core::model::{scale_quantize, Checkpoint, CheckpointMeta, Codec, CodecConfig, Mode};
use lrc_core::qmap::{
    centered_rect, compose_region_map, generate_sequence, lambda_map, lambda_of, sweep_levels,
    uniform_map, MapGenConfig, QualityMap, DEFAULT_ALPHA, DEFAULT_BETA,
};
use lrc_core::stream::{encode_sequence, StreamOptions};
use lrc_core::tensor::Tensor;
use lrc_core::train::{
    clip_loss_value, loss_and_gradients, synth_clip, wmse_loss, ClipDatasetSpec, TrainConfig,
    Trainer,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn frame(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(
        [n, 3, h, w],
        (0..n * 3 * h * w).map(|_| rng.gen()).collect(),
    )
}

fn lambda_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for m in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let lm = lambda_map(&uniform_map(4, 4, m).unwrap(), DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        let want = 0.001 * (6.0 * m).exp();
        for v in &lm.values {
            worst = worst.max((v - want).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max abs error {worst:.2e}"))
}

fn uniform_wmse_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
        let x = frame(&mut rng, 1, h, w);
        let y = frame(&mut rng, 1, h, w);
        let m: f64 = rng.gen();
        let lam = lambda_map(&uniform_map(h, w, m).unwrap(), DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        let got = wmse_loss(&x, &y, &lam).unwrap();
        let mse = x.zip_map(&y, |a, b| (a - b) * (a - b)).mean();
        let want = lambda_of(m, DEFAULT_ALPHA, DEFAULT_BETA) * mse;
        worst = worst.max((got - want).abs() / want);
    }
    outcome(
        worst <= 1e-6,
        format!("max relative error {worst:.2e} over 100 pairs"),
    )
}

fn gradient_fidelity() -> Outcome {
    let cfg = CodecConfig::tiny();
    let codec = Codec::new(cfg, 21).unwrap();
    let params = codec.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Tensor> = synth_clip(&ClipDatasetSpec::synthetic(2, 32, 1, 4), 0);
    let maps: Vec<Tensor> = (0..2)
        .map(|_| {
            Tensor::from_vec(
                [1, 1, 32, 32],
                (0..1024).map(|_| rng.gen_range(0.1..0.9)).collect(),
            )
        })
        .collect();
    let mode = Mode::Relaxed { seed: 17 };
    let grads = loss_and_gradients(&codec, &frames, &maps, mode).unwrap();
    let loss = |c: &Codec, m: &[Tensor]| clip_loss_value(c, &frames, m, mode).unwrap().total;

    let mut errors = Vec::new();
    let h = 1e-5;
    for _ in 0..150 {
        let i = rng.gen_range(0..codec.params().len());
        let Some(g) = &grads.params[i] else { continue };
        let j = rng.gen_range(0..g.len());
        let mut c = Codec::from_checkpoint(&codec.to_checkpoint(meta(&codec))).unwrap();
        let base = c.params().get(i).data()[j];
        c.params_mut().get_mut(i).data_mut()[j] = base + h;
        let up = loss(&c, &maps);
        c.params_mut().get_mut(i).data_mut()[j] = base - h;
        let down = loss(&c, &maps);
        errors.push(rel_err(g.data()[j], (up - down) / (2.0 * h)));
    }
    for _ in 0..50 {
        let t = rng.gen_range(0..2);
        let j = rng.gen_range(0..1024);
        let mut m = maps.clone();
        let base = m[t].data()[j];
        m[t].data_mut()[j] = base + h;
        let up = loss(&codec, &m);
        m[t].data_mut()[j] = base - h;
        let down = loss(&codec, &m);
        errors.push(rel_err(grads.maps[t].data()[j], (up - down) / (2.0 * h)));
    }
    let good = errors.iter().filter(|&&e| e < 1e-3).count();
    let frac = good as f64 / errors.len() as f64;
    outcome(
        params <= 50_000 && errors.len() >= 195 && frac >= 0.95,
        format!(
            "{good}/{} coordinates within 1e-3 ({params} parameters)",
            errors.len()
        ),
    )
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn meta(c: &Codec) -> CheckpointMeta {
    CheckpointMeta {
        config: c.config().clone(),
        stage_frames: vec![],
        step: 0,
        seed: 0,
    }
}

fn quantizer_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let omega: Vec<f64> = (0..n)
        .map(|_| 10f64.powf(rng.gen_range(-2.0..1.5)))
        .collect();
    let (yhat, _) = scale_quantize(&y, &omega, &mu);
    let bound_ok = (0..n).all(|i| (yhat[i] - y[i]).abs() <= omega[i] / 2.0 * (1.0 + 1e-12) + 1e-12);
    let ones = vec![1.0; n];
    let (yhat1, k1) = scale_quantize(&y, &ones, &mu);
    let unit_ok = (0..n).all(|i| {
        let r = (y[i] - mu[i]).round();
        k1[i] as f64 == r && yhat1[i] == r + mu[i]
    });
    outcome(
        bound_ok && unit_ok,
        format!("{n} samples; error bound {bound_ok}, unit step {unit_ok}"),
    )
}

fn random_maps(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize) -> Vec<QualityMap> {
    generate_sequence(h, w, &MapGenConfig::default(), rng.gen(), t)
        .unwrap()
        .into_iter()
        .map(|g| g.map)
        .collect()
}

fn lossless_pipeline() -> Outcome {
    let codec = Codec::new(CodecConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = StreamOptions {
        signal_qmap: true,
        backend: CoderBackend::Reference,
    };
    let mut frames_checked = 0;
    let mut failures = Vec::new();
    for seq in 0..10 {
        let spec = ClipDatasetSpec::synthetic(5, 32, 10, 50 + seq);
        let clip = synth_clip(&spec, seq as usize);
        let maps = random_maps(&mut rng, 32, 32, 5);
        let enc = encode_sequence(&codec, &clip, &maps, opts).unwrap();
        let parsed = Bitstream::from_bytes(&enc.bytes).unwrap();
        if parsed.to_bytes().unwrap() != enc.bytes {
            failures.push(format!("sequence {seq}: repack differs"));
        }
        let mut state = codec.init_temporal_state(32, 32).unwrap();
        for (t, (fp, ef)) in parsed.frames.iter().zip(&enc.frames).enumerate() {
            let m = lrc_core::qmap::decode_qmap(&fp.qmap, 32, 32).unwrap();
            let mut next = |l: usize, st: &Tensor| {
                SymbolPlane::decode(&fp.levels[l], st.data(), CoderBackend::Reference)
            };
            let (recon, s, _) = codec.decode_frame_with(&mut next, &m, &state).unwrap();
            if recon != ef.encoding.recon || s != ef.encoding.state || m != ef.qmap {
                failures.push(format!("sequence {seq} frame {t}"));
            }
            state = s;
            frames_checked += 1;
        }
    }
    outcome(
        failures.is_empty() && frames_checked == 50,
        if failures.is_empty() {
            format!("{frames_checked} frames bit-exact")
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    )
}

fn rate_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 12_000;
        let spread = LogNormal::new(rng.gen_range(-1.5..1.5), 0.8).unwrap();
        let scales: Vec<f64> = (0..n)
            .map(|_| Distribution::<f64>::sample(&spread, &mut rng).clamp(0.06, 500.0))
            .collect();
        let symbols: Vec<i32> = scales
            .iter()
            .map(|&s| (Normal::new(0.0f64, s).unwrap().sample(&mut rng)).round() as i32)
            .collect();
        let plane = SymbolPlane::new(&symbols, &scales);
        let ideal: f64 = plane
            .symbols
            .iter()
            .zip(&scales)
            .map(|(&k, &s)| symbol_bits(k, s))
            .sum();
        let actual = 8.0 * plane.encode(CoderBackend::Reference).unwrap().len() as f64;
        worst = worst.max((actual - ideal).abs() / ideal);
    }
    outcome(
        worst <= 0.03,
        format!("worst deviation {:.3}% over 20 fields", 100.0 * worst),
    )
}

fn bd_rate_oracle() -> Outcome {
    type Case = (&'static [(f64, f64)], &'static [(f64, f64)], f64);
    const ORACLE: &[Case] = include!("data/bd_oracle.in");
    let curve = |pts: &[(f64, f64)]| {
        RdCurve::new(
            "c",
            pts.iter()
                .map(|&(bpp, psnr)| RdPoint {
                    label: String::new(),
                    bpp,
                    psnr,
                })
                .collect(),
        )
        .unwrap()
    };
    let base = curve(&[
        (0.05, 28.0),
        (0.1, 30.5),
        (0.2, 33.1),
        (0.4, 35.2),
        (0.8, 37.0),
    ]);
    let shifted = curve(
        &base
            .points()
            .iter()
            .map(|p| (p.bpp * 1.1, p.psnr))
            .collect::<Vec<_>>(),
    );
    let same = bd_rate(&base, &base).unwrap();
    let shift = bd_rate(&base, &shifted).unwrap();
    let worst = ORACLE
        .iter()
        .map(|(a, b, want)| (bd_rate(&curve(a), &curve(b)).unwrap() - want).abs())
        .fold(0.0, f64::max);
    outcome(
        same == 0.0 && (shift - 10.0).abs() <= 1e-6 && worst <= 0.05,
        format!("identity {same}, x1.10 shift {shift:.9}%, oracle max gap {worst:.2e} pp"),
    )
}

fn trained_codec() -> (Codec, Vec<u8>, String) {
    if let Ok(p) = std::env::var("LRCV_ACCEPTANCE_CHECKPOINT") {
        let bytes = std::fs::read(&p).expect("checkpoint readable");
        let codec = Codec::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        return (codec, bytes, format!("loaded {p}"));
    }
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(TrainConfig::desk_default()).unwrap();
    let saved = trainer.run(dir.path(), None, |_| {}).unwrap();
    let bytes = std::fs::read(saved.last().unwrap()).unwrap();
    let note = format!(
        "trained {} steps in {:.0} s",
        trainer.step,
        t0.elapsed().as_secs_f64()
    );
    (trainer.codec, bytes, note)
}

fn test_clips(count: usize, frames: usize) -> Vec<Vec<Tensor>> {
    let spec = ClipDatasetSpec::synthetic(frames, 64, count, 0xE7A1);
    (0..count).map(|i| synth_clip(&spec, i)).collect()
}

fn scaled_rd_sweep(codec: &Codec, minutes: f64) -> Outcome {
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep =
        eval::sweep_uniform(codec, &test_clips(16, 3), &levels, StreamOptions::default()).unwrap();
    let p = &sweep.points;
    let rising = p
        .windows(2)
        .all(|w| w[1].bpp_latent > w[0].bpp_latent && w[1].psnr > w[0].psnr);
    let total_rising = p.windows(2).all(|w| w[1].bpp_total > w[0].bpp_total);
    let gain = p[4].psnr - p[0].psnr;
    let ratio = p[4].bpp_latent / p[0].bpp_latent;
    let ok = rising && gain >= 4.0 && ratio >= 3.0 && minutes <= 60.0;
    let listing: Vec<String> = p
        .iter()
        .map(|s| {
            format!(
                "{}: {:.3}/{:.3} bpp {:.2} dB",
                s.setting, s.bpp_latent, s.bpp_total, s.psnr
            )
        })
        .collect();
    outcome(
        ok,
        format!(
            "monotone {rising} (total bpp {total_rising}), PSNR gain {gain:.2} dB, rate ratio {ratio:.2}, training {minutes:.1} min; {}",
            listing.join("; ")
        ),
    )
}

fn region_control(codec: &Codec) -> Outcome {
    let rect = centered_rect(64, 64, 0.25);
    let mask = rect.mask(64, 64);
    let outside: Vec<bool> = mask.iter().map(|b| !b).collect();
    let m = compose_region_map(64, 64, 0.0, &[(rect, 1.0)]).unwrap();
    let (mut pin, mut pout, mut hin, mut hout, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, clip) in test_clips(8, 3).iter().enumerate() {
        let maps = vec![m.clone(); clip.len()];
        let (rows, enc) = eval::evaluate_clip(
            codec,
            i,
            "rect",
            clip,
            &maps,
            Some(&mask),
            StreamOptions::default(),
        )
        .unwrap();
        for (r, f) in rows.iter().zip(&enc.frames) {
            pin += r.psnr_in_region.unwrap();
            pout += r.psnr_out_region.unwrap();
            let hm = bit_heatmap(codec.config(), &f.encoding).unwrap();
            hin += hm.region_mean(&mask).unwrap();
            hout += hm.region_mean(&outside).unwrap();
            n += 1.0;
        }
    }
    let (pin, pout, hin, hout) = (pin / n, pout / n, hin / n, hout / n);
    outcome(
        pin - pout >= 2.0 && hin >= 1.5 * hout,
        format!(
            "PSNR in {pin:.2} dB, out {pout:.2} dB; heatmap in {hin:.4}, out {hout:.4} bits/px (x{:.2})",
            hin / hout
        ),
    )
}

fn single_checkpoint(codec: &Codec, bytes: &[u8]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    std::fs::write(&path, bytes).unwrap();
    let size_before = std::fs::metadata(&path).unwrap().len();
    let params_before = codec.params().clone();
    let image_before = codec.to_checkpoint(meta(codec)).to_bytes().unwrap();

    let loaded = Codec::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let sweep = eval::sweep_uniform(
        &loaded,
        &test_clips(2, 2),
        &sweep_levels(),
        StreamOptions::default(),
    )
    .unwrap();

    let size_after = std::fs::metadata(&path).unwrap().len();
    let image_after = loaded.to_checkpoint(meta(&loaded)).to_bytes().unwrap();
    let names: Vec<&str> = (0..params_before.len())
        .map(|i| params_before.name(i))
        .collect();
    let per_rate = names
        .iter()
        .filter(|n| n.contains("rate") || n.contains("level_point"))
        .count();
    let ok = sweep.points.len() == 21
        && size_before == size_after
        && image_before == image_after
        && loaded.params() == &params_before
        && per_rate == 0;
    outcome(
        ok,
        format!(
            "{} points from one checkpoint of {size_before} bytes ({size_after} after), {} parameters, {per_rate} per-rate tensors, parameters unchanged {}",
            sweep.points.len(),
            loaded.param_count(),
            image_before == image_after
        ),
    )
}

fn optimized_maps(codec: &Codec) -> Outcome {
    let clips = test_clips(4, 3);
    let mut worse = Vec::new();
    let mut improved = 0;
    let mut total = 0;
    for lambda in [0.005, 0.02, 0.08] {
        for (i, clip) in clips.iter().enumerate() {
            let opts = OptimizeOptions {
                steps: 12,
                ..Default::default()
            };
            let res = eval::optimize_qmap(codec, clip, lambda, opts).unwrap();
            let best_uniform = sweep_levels()
                .into_iter()
                .map(|l| {
                    let maps = vec![uniform_map(64, 64, l).unwrap(); clip.len()];
                    eval::optimize::coded_objective(codec, clip, &maps, lambda, opts.stream)
                        .unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            let again =
                eval::optimize::coded_objective(codec, clip, &res.maps, lambda, opts.stream)
                    .unwrap();
            if again > best_uniform {
                worse.push(format!(
                    "λ {lambda} clip {i}: {again:.4} > {best_uniform:.4}"
                ));
            }
            if again < best_uniform {
                improved += 1;
            }
            total += 1;
        }
    }
    outcome(
        worse.is_empty(),
        if worse.is_empty() {
            format!(
                "{total} clip/λ pairs at or below the best uniform map, {improved} strictly below"
            )
        } else {
            worse.join("; ")
        },
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    record(1, "weight map closed form", lambda_exactness());
    record(2, "uniform weighted distortion", uniform_wmse_reduction());
    record(3, "gradient fidelity", gradient_fidelity());
    record(4, "quantizer contract", quantizer_contract());
    record(5, "lossless pipeline", lossless_pipeline());
    record(6, "rate estimate calibration", rate_calibration());

    let t0 = Instant::now();
    let (codec, bytes, note) = trained_codec();
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    println!("trained model: {note}, {} parameters", codec.param_count());
    record(7, "uniform sweep", scaled_rd_sweep(&codec, minutes));
    record(8, "region control", region_control(&codec));
    record(
        9,
        "one checkpoint for all rates",
        single_checkpoint(&codec, &bytes),
    );
    record(10, "BD-rate", bd_rate_oracle());
    record(11, "optimized maps", optimized_maps(&codec));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("all 11 criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
