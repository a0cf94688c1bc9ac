//! Trains a codec with the desk schedule (or a TOML config) and prints a
//! uniform-map sweep, a region test and map optimization results.
//!
//! Usage: `desk_run <out_dir> [config.toml]`

use std::path::PathBuf;
use std::time::Instant;

use lrc_core::eval::{self, bit_heatmap, OptimizeOptions};
use lrc_core::model::{Checkpoint, Codec};
use lrc_core::qmap::{centered_rect, compose_region_map};
use lrc_core::stream::StreamOptions;
use lrc_core::train::{synth_clip, ClipDatasetSpec, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map_or("desk_run", String::as_str));
    let cfg = match args.get(2) {
        Some(p) => TrainConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::desk_default(),
    };
    let done = (1..=cfg.stages.len())
        .rev()
        .find(|k| out.join(format!("stage{k}.ckpt")).exists());
    let codec = if done == Some(cfg.stages.len()) {
        Codec::from_checkpoint(&Checkpoint::load(
            &out.join(format!("stage{}.ckpt", cfg.stages.len())),
        )?)?
    } else {
        let mut tr = match done {
            Some(k) => Trainer::resume(
                cfg.clone(),
                &Checkpoint::load(&out.join(format!("stage{k}.ckpt")))?,
            )?,
            None => Trainer::new(cfg.clone())?,
        };
        println!("parameters: {}", tr.codec.param_count());
        let t0 = Instant::now();
        let mut acc = (0.0, 0.0, 0usize);
        tr.run(&out, None, |r| {
            acc = (acc.0 + r.loss.rate, acc.1 + r.loss.wmse, acc.2 + 1);
            if r.step % 50 == 49 {
                let n = acc.2 as f64;
                println!(
                    "step {:5} stage {} bpp {:.4} wmse {:.4} |g| {:.3} {:.0}s",
                    r.step + 1,
                    r.stage,
                    acc.0 / n,
                    acc.1 / n,
                    r.grad_norm,
                    t0.elapsed().as_secs_f64()
                );
                acc = (0.0, 0.0, 0);
            }
        })?;
        tr.codec
    };

    let frames: usize = std::env::var("EVAL_FRAMES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3);
    let test = ClipDatasetSpec::synthetic(frames, 64, 16, 0xE7A1);
    let clips: Vec<_> = (0..16).map(|i| synth_clip(&test, i)).collect();
    let opts = StreamOptions::default();
    let sweep = eval::sweep_uniform(&codec, &clips, &[0.0, 0.25, 0.5, 0.75, 1.0], opts)?;
    for p in &sweep.points {
        println!(
            "level {:>5} latent {:.4} total {:.4} psnr {:.2}",
            p.setting, p.bpp_latent, p.bpp_total, p.psnr
        );
    }

    let rect = centered_rect(64, 64, 0.25);
    let mask = rect.mask(64, 64);
    let outside: Vec<bool> = mask.iter().map(|b| !b).collect();
    let m = compose_region_map(64, 64, 0.0, &[(rect, 1.0)])?;
    let (mut pin, mut pout, mut hin, mut hout) = (0.0, 0.0, 0.0, 0.0);
    for (i, clip) in clips.iter().take(8).enumerate() {
        let maps = vec![m.clone(); clip.len()];
        let (rows, enc) = eval::evaluate_clip(&codec, i, "rect", clip, &maps, Some(&mask), opts)?;
        for (r, f) in rows.iter().zip(&enc.frames) {
            pin += r.psnr_in_region.unwrap_or(0.0);
            pout += r.psnr_out_region.unwrap_or(0.0);
            let hm = bit_heatmap(codec.config(), &f.encoding)?;
            hin += hm.region_mean(&mask)?;
            hout += hm.region_mean(&outside)?;
        }
    }
    let n = (8 * frames) as f64;
    println!(
        "rect: psnr in {:.2} out {:.2}; heat in {:.4} out {:.4}",
        pin / n,
        pout / n,
        hin / n,
        hout / n
    );

    let steps: usize = std::env::var("OPT_STEPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(20);
    for lambda in [0.005, 0.02, 0.08] {
        for (i, clip) in clips.iter().take(2).enumerate() {
            let t0 = Instant::now();
            let o = eval::optimize_qmap(
                &codec,
                clip,
                lambda,
                OptimizeOptions {
                    steps,
                    ..Default::default()
                },
            )?;
            println!(
                "λ {lambda} clip {i}: init {} J {:.4} -> {:.4} (best step {}) {:.0}s",
                o.init_level,
                o.init_objective,
                o.objective,
                o.best_step,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
