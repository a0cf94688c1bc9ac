//! Quality-map side channel.
//!
//! The map is reduced to a grid with one node per 16×16 block, quantized to
//! 6 bits and entropy coded. The decoder bilinearly upsamples the
//! dequantized grid. Grid nodes are chosen so that the *decoded* map has the
//! same 16×16 block means as the input: the encoder solves
//! `pool(upsample(G)) = pool(m)` for `G` instead of using the block means
//! directly. This makes encode → decode → encode reproduce its bytes.
//!
//! Payload layout: one mode byte, then a bit stream (MSB first, zero padded)
//! of either raw 6-bit codes (mode 0) or zigzagged left/up DPCM residuals
//! coded with order-0 Exp-Golomb codes (mode 1). The shorter one is sent.

use super::QualityMap;
use crate::error::{Error, Result};
use crate::graph::Resample;
use crate::tensor::Tensor;

pub const SIGNAL_FACTOR: usize = 16;
const LEVELS: usize = 64;

const MODE_RAW: u8 = 0;
const MODE_DPCM: u8 = 1;

pub fn grid_dims(height: usize, width: usize) -> (usize, usize) {
    (
        height.div_ceil(SIGNAL_FACTOR),
        width.div_ceil(SIGNAL_FACTOR),
    )
}

/// `T[j][k]`: mean over block `j` of the bilinear weight of node `k`.
fn pooled_upsample_matrix(n_grid: usize, n_pix: usize) -> Vec<Vec<f64>> {
    let r = Resample::bilinear(n_grid, 1, n_pix, 1, SIGNAL_FACTOR);
    let mut t = vec![vec![0.0; n_grid]; n_grid];
    for (i, weights) in r.rows.iter().enumerate() {
        let j = i / SIGNAL_FACTOR;
        let count = (n_pix - j * SIGNAL_FACTOR).min(SIGNAL_FACTOR) as f64;
        for &(k, w) in weights {
            t[j][k] += w / count;
        }
    }
    t
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty system");
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn block_means(m: &QualityMap) -> Vec<f64> {
    let (gh, gw) = grid_dims(m.height(), m.width());
    let mut sums = vec![0.0; gh * gw];
    let mut counts = vec![0usize; gh * gw];
    for y in 0..m.height() {
        for x in 0..m.width() {
            let j = (y / SIGNAL_FACTOR) * gw + x / SIGNAL_FACTOR;
            sums[j] += m.get(y, x);
            counts[j] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect()
}

/// Grid whose bilinear upsampling has the block means of `m`.
pub fn analysis_grid(m: &QualityMap) -> Vec<f64> {
    let (gh, gw) = grid_dims(m.height(), m.width());
    let pooled = block_means(m);
    let ty = pooled_upsample_matrix(gh, m.height());
    let tx = pooled_upsample_matrix(gw, m.width());
    // pooled = Ty · G · Txᵀ
    let mut a = vec![0.0; gh * gw];
    for c in 0..gw {
        let col: Vec<f64> = (0..gh).map(|r| pooled[r * gw + c]).collect();
        for (r, v) in solve(ty.clone(), col).into_iter().enumerate() {
            a[r * gw + c] = v;
        }
    }
    let mut g = vec![0.0; gh * gw];
    for r in 0..gh {
        let row = a[r * gw..(r + 1) * gw].to_vec();
        g[r * gw..(r + 1) * gw].copy_from_slice(&solve(tx.clone(), row));
    }
    g
}

pub fn quantize_level(v: f64) -> u8 {
    ((v.clamp(0.0, 1.0) * LEVELS as f64).floor() as usize).min(LEVELS - 1) as u8
}

pub fn dequantize_level(q: u8) -> f64 {
    (q as f64 + 0.5) / LEVELS as f64
}

/// Bilinear upsampling of a node grid to `height × width`.
pub fn upsample_grid(grid: &[f64], height: usize, width: usize) -> QualityMap {
    let (gh, gw) = grid_dims(height, width);
    let r = Resample::bilinear(gh, gw, height, width, SIGNAL_FACTOR);
    let t = r.apply(&Tensor::from_vec([1, 1, gh, gw], grid.to_vec()));
    QualityMap::from_tensor_clamped(&t).expect("grid values are finite")
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    n: u8,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            acc: 0,
            n: 0,
        }
    }

    fn put(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1) as u8;
            self.n += 1;
            if self.n == 8 {
                self.bytes.push(self.acc);
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push(self.acc << (8 - self.n));
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    base: usize,
    pos: usize,
}

impl BitReader<'_> {
    fn bit(&mut self) -> Result<u32> {
        let byte = self.pos / 8;
        let Some(&b) = self.bytes.get(byte) else {
            return Err(Error::Truncated {
                offset: self.base + byte,
                what: "quality map payload",
            });
        };
        let v = (b >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(v as u32)
    }

    fn get(&mut self, bits: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..bits {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }
}

fn predict(q: &[u8], gw: usize, i: usize) -> i32 {
    let (r, c) = (i / gw, i % gw);
    if c > 0 {
        q[i - 1] as i32
    } else if r > 0 {
        q[i - gw] as i32
    } else {
        (LEVELS / 2) as i32
    }
}

fn write_exp_golomb(w: &mut BitWriter, v: u32) {
    let x = v + 1;
    let nbits = 31 - x.leading_zeros();
    w.put(0, nbits);
    w.put(x, nbits + 1);
}

fn read_exp_golomb(r: &mut BitReader<'_>) -> Result<u32> {
    let mut zeros = 0;
    while r.bit()? == 0 {
        zeros += 1;
        if zeros > 16 {
            return Err(Error::Corrupt {
                offset: r.base + r.pos / 8,
                what: "Exp-Golomb prefix too long".into(),
            });
        }
    }
    Ok(((1 << zeros) | r.get(zeros)?) - 1)
}

pub fn encode_codes(codes: &[u8], gw: usize) -> Vec<u8> {
    let mut raw = BitWriter::new();
    for &q in codes {
        raw.put(q as u32, 6);
    }
    let raw = raw.finish();
    let mut dpcm = BitWriter::new();
    for i in 0..codes.len() {
        let r = codes[i] as i32 - predict(codes, gw, i);
        let z = if r >= 0 { 2 * r } else { -2 * r - 1 } as u32;
        write_exp_golomb(&mut dpcm, z);
    }
    let dpcm = dpcm.finish();
    let (mode, body) = if dpcm.len() < raw.len() {
        (MODE_DPCM, dpcm)
    } else {
        (MODE_RAW, raw)
    };
    let mut out = Vec::with_capacity(1 + body.len());
    out.push(mode);
    out.extend_from_slice(&body);
    out
}

pub fn decode_codes(bytes: &[u8], count: usize, gw: usize) -> Result<Vec<u8>> {
    let Some((&mode, body)) = bytes.split_first() else {
        return Err(Error::Truncated {
            offset: 0,
            what: "quality map mode byte",
        });
    };
    let mut r = BitReader {
        bytes: body,
        base: 1,
        pos: 0,
    };
    let mut codes = Vec::with_capacity(count);
    match mode {
        MODE_RAW => {
            for _ in 0..count {
                codes.push(r.get(6)? as u8);
            }
        }
        MODE_DPCM => {
            for i in 0..count {
                let z = read_exp_golomb(&mut r)? as i32;
                let res = if z % 2 == 0 { z / 2 } else { -(z + 1) / 2 };
                let q = predict(&codes, gw, i) + res;
                if !(0..LEVELS as i32).contains(&q) {
                    return Err(Error::Corrupt {
                        offset: 1 + r.pos / 8,
                        what: format!("quality code {q} out of range"),
                    });
                }
                codes.push(q as u8);
            }
        }
        m => {
            return Err(Error::Corrupt {
                offset: 0,
                what: format!("unknown quality map mode {m}"),
            })
        }
    }
    let used = r.pos.div_ceil(8);
    if used != body.len() {
        return Err(Error::Corrupt {
            offset: 1 + used,
            what: format!("{} trailing bytes after quality map", body.len() - used),
        });
    }
    Ok(codes)
}

pub fn encode_qmap(m: &QualityMap) -> Vec<u8> {
    let (_, gw) = grid_dims(m.height(), m.width());
    let codes: Vec<u8> = analysis_grid(m).into_iter().map(quantize_level).collect();
    encode_codes(&codes, gw)
}

pub fn decode_qmap(bytes: &[u8], height: usize, width: usize) -> Result<QualityMap> {
    let (gh, gw) = grid_dims(height, width);
    let codes = decode_codes(bytes, gh * gw, gw)?;
    let grid: Vec<f64> = codes.into_iter().map(dequantize_level).collect();
    Ok(upsample_grid(&grid, height, width))
}

/// The map the decoder will see for `m`.
pub fn signal_roundtrip(m: &QualityMap) -> QualityMap {
    decode_qmap(&encode_qmap(m), m.height(), m.width()).expect("fresh payload decodes")
}

#[cfg(test)]
mod tests {
    use super::super::{
        compose_region_map, generate_initial_map, uniform_map, MapGenConfig, RegionShape,
    };
    use super::*;

    #[test]
    fn uniform_map_survives_within_half_bin() {
        for &level in &[0.0, 0.013, 0.5, 0.77, 1.0] {
            let m = uniform_map(48, 80, level).unwrap();
            let d = signal_roundtrip(&m);
            for &v in d.values() {
                assert!((v - level).abs() <= 1.0 / 128.0 + 1e-12, "{level} -> {v}");
            }
        }
    }

    #[test]
    fn idempotent_after_first_pass() {
        let c = MapGenConfig::default();
        for seed in 0..10 {
            let m = generate_initial_map(64, 96, &c, seed).unwrap().map;
            let first = encode_qmap(&m);
            let decoded = decode_qmap(&first, 64, 96).unwrap();
            assert!(decoded.values().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(encode_qmap(&decoded), first, "seed {seed}");
        }
        let r = RegionShape::Rect {
            x: 20,
            y: 9,
            w: 30,
            h: 17,
        };
        let m = compose_region_map(50, 70, 0.1, &[(r, 0.95)]).unwrap();
        let first = encode_qmap(&m);
        assert_eq!(encode_qmap(&decode_qmap(&first, 50, 70).unwrap()), first);
    }

    #[test]
    fn block_means_are_preserved() {
        let c = MapGenConfig::default();
        let m = generate_initial_map(64, 64, &c, 4).unwrap().map;
        let grid: Vec<f64> = analysis_grid(&m);
        let up = upsample_grid(&grid, 64, 64);
        for (a, b) in block_means(&up).iter().zip(block_means(&m)) {
            // Exact unless the solved grid had to be clamped.
            if grid.iter().all(|v| (0.0..=1.0).contains(v)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn payload_bound_for_256() {
        let c = MapGenConfig::default();
        for seed in 0..5 {
            let m = generate_initial_map(256, 256, &c, seed).unwrap().map;
            assert!(encode_qmap(&m).len() <= 192 + 1);
        }
        assert!(encode_qmap(&uniform_map(256, 256, 0.4).unwrap()).len() < 40);
    }

    #[test]
    fn truncation_reports_offset() {
        let m = generate_initial_map(64, 64, &MapGenConfig::default(), 1)
            .unwrap()
            .map;
        let bytes = encode_qmap(&m);
        match decode_qmap(&bytes[..bytes.len() - 1], 64, 64) {
            Err(Error::Truncated { offset, .. }) => assert_eq!(offset, bytes.len() - 1),
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(
            decode_qmap(&[], 64, 64),
            Err(Error::Truncated { offset: 0, .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_qmap(&extra, 64, 64).is_err());
    }
}
