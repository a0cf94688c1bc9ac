use super::*;
use crate::entropy::CoderBackend;
use crate::model::CodecConfig;
use crate::qmap::{centered_rect, compose_region_map, signal_roundtrip};
use crate::stream::decode_sequence;
use crate::train::{synth_clip, ClipDatasetSpec};

fn codec() -> Codec {
    Codec::new(CodecConfig::tiny(), 11).unwrap()
}

fn clip(frames: usize, seed: u64) -> Vec<Tensor> {
    synth_clip(&ClipDatasetSpec::synthetic(frames, 32, 1, seed), 0)
}

fn reference() -> StreamOptions {
    StreamOptions {
        backend: CoderBackend::Reference,
        ..Default::default()
    }
}

#[test]
fn single_point_sweep_matches_direct_encode() {
    let c = codec();
    let frames = clip(1, 1);
    let sweep = sweep_uniform(&c, &[frames.clone()], &[0.4], reference()).unwrap();
    assert_eq!(sweep.points.len(), 1);
    let m = uniform_map(32, 32, 0.4).unwrap();
    let (rows, enc) = evaluate_clip(&c, 0, "x", &frames, &[m], None, reference()).unwrap();
    assert_eq!(sweep.points[0].psnr, rows[0].psnr);
    assert_eq!(sweep.points[0].bpp_latent, rows[0].bpp_latent);
    assert_eq!(rows[0].bpp_total, 8.0 * enc.bytes.len() as f64 / 1024.0);
}

#[test]
fn sweep_rows_and_totals() {
    let c = codec();
    let clips = vec![clip(2, 1), clip(2, 2)];
    let sweep = sweep_uniform(&c, &clips, &[0.0, 1.0], reference()).unwrap();
    assert_eq!(sweep.points.len(), 2);
    assert_eq!(sweep.rows.len(), 8);
    for r in &sweep.rows {
        assert!(r.bpp_total > r.bpp_latent + r.bpp_qmap);
        assert!(r.psnr_in_region.is_none());
    }
    let mut buf = Vec::new();
    write_csv(&sweep.points, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("setting,frames,bpp_total,bpp_latent,bpp_qmap,psnr"));
}

#[test]
fn frame_csv_columns() {
    let c = codec();
    let frames = clip(1, 3);
    let rect = centered_rect(32, 32, 0.25);
    let m = compose_region_map(32, 32, 0.0, &[(rect, 1.0)]).unwrap();
    let mask = rect.mask(32, 32);
    let (rows, _) = evaluate_clip(&c, 0, "rect", &frames, &[m], Some(&mask), reference()).unwrap();
    assert!(rows[0].psnr_in_region.is_some() && rows[0].psnr_out_region.is_some());
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(
        "clip,frame,setting,bpp_total,bpp_latent,bpp_qmap,psnr,psnr_in_region,psnr_out_region\n"
    ));
}

#[test]
fn one_checkpoint_serves_every_level() {
    let c = codec();
    let before = c.params().clone();
    let sweep =
        sweep_uniform(&c, &[clip(1, 4)], &crate::qmap::sweep_levels(), reference()).unwrap();
    assert_eq!(sweep.points.len(), 21);
    assert_eq!(c.params(), &before);
}

#[test]
fn zero_steps_returns_initialization() {
    let c = codec();
    let frames = clip(2, 5);
    let opts = OptimizeOptions {
        steps: 0,
        init: optimize::InitRule::NearestLambda,
        ..Default::default()
    };
    let out = optimize_qmap(&c, &frames, 0.02, opts).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.best_step, 0);
    let want = signal_roundtrip(&uniform_map(32, 32, out.init_level).unwrap());
    assert!(out.maps.iter().all(|m| m == &want));
    let lvl = crate::qmap::level_of_lambda(0.02, 0.001, 6.0);
    assert!((out.init_level - lvl).abs() <= 0.025 + 1e-12);
}

#[test]
fn optimized_objective_never_exceeds_uniform() {
    let c = codec();
    let frames = clip(2, 6);
    let lambda = 0.01;
    let opts = OptimizeOptions {
        steps: 4,
        ..Default::default()
    };
    let out = optimize_qmap(&c, &frames, lambda, opts).unwrap();
    assert_eq!(out.history.len(), 5);
    let again = optimize::coded_objective(&c, &frames, &out.maps, lambda, opts.stream).unwrap();
    assert!((again - out.objective).abs() < 1e-12);
    for level in crate::qmap::sweep_levels() {
        let maps = vec![uniform_map(32, 32, level).unwrap(); 2];
        let j = optimize::coded_objective(&c, &frames, &maps, lambda, opts.stream).unwrap();
        assert!(
            out.objective <= j + 1e-12,
            "level {level}: {} > {j}",
            out.objective
        );
    }
}

#[test]
fn flat_clip_keeps_a_flat_map() {
    let c = codec();
    let frames = vec![Tensor::full([1, 3, 32, 32], 0.45); 2];
    let opts = OptimizeOptions {
        steps: 5,
        ..Default::default()
    };
    let out = optimize_qmap(&c, &frames, 0.02, opts).unwrap();
    for m in &out.maps {
        assert!(m.max() - m.min() <= 0.2, "{} {}", m.min(), m.max());
    }
}

#[test]
fn optimizer_rejects_bad_input() {
    let c = codec();
    assert!(optimize_qmap(&c, &clip(1, 1), 0.0, OptimizeOptions::default()).is_err());
    assert!(optimize_qmap(&c, &[], 0.1, OptimizeOptions::default()).is_err());
}

#[test]
fn heatmap_of_decoded_stream_agrees() {
    let c = codec();
    let frames = clip(2, 7);
    let maps = vec![uniform_map(32, 32, 0.7).unwrap(); 2];
    let enc = encode_sequence(&c, &frames, &maps, reference()).unwrap();
    let dec = decode_sequence(&c, &enc.bytes, None, CoderBackend::Reference).unwrap();
    for (f, d) in enc.frames.iter().zip(&dec.frames) {
        assert_eq!(&f.encoding.recon, d);
        let hm = bit_heatmap(c.config(), &f.encoding).unwrap();
        let coded = 8.0 * f.latent_bytes() as f64;
        assert!(hm.total() <= coded + 64.0, "{} vs {coded}", hm.total());
    }
}
