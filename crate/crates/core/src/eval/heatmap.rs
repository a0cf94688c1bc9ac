use crate::entropy::symbol_bits;
use crate::error::{invalid, Result};
use crate::graph::reflect_index;
use crate::model::{CodecConfig, FrameEncoding};

/// Estimated coded bits attributed to each pixel of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BitHeatmap {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<f64>,
}

impl BitHeatmap {
    pub fn total(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.bits.iter().copied().fold(0.0, f64::max)
    }

    /// Mean bits per pixel over the selected pixels.
    pub fn region_mean(&self, mask: &[bool]) -> Result<f64> {
        if mask.len() != self.bits.len() {
            return Err(invalid("mask size differs from heatmap"));
        }
        let (sum, n) = self
            .bits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (b, _)| (s + b, n + 1));
        if n == 0 {
            return Err(invalid("empty region mask"));
        }
        Ok(sum / n as f64)
    }
}

/// Spreads each latent element's bits evenly over the pixels it covers and
/// sums the levels. Bits landing in the reflect-padded border are returned
/// to the pixels they were mirrored from, so the total is preserved.
pub fn bit_heatmap(cfg: &CodecConfig, enc: &FrameEncoding) -> Result<BitHeatmap> {
    let (h, w) = (enc.recon.h(), enc.recon.w());
    let (ph, pw) = cfg.padded_dims(h, w);
    if enc.latents.levels.len() != cfg.levels || enc.priors.len() != cfg.levels {
        return Err(invalid("encoding does not match the codec configuration"));
    }
    let mut bits = vec![0.0; h * w];
    for (l, (lat, prior)) in enc.latents.levels.iter().zip(&enc.priors).enumerate() {
        let st = prior.scales();
        let [_, c, lh, lw] = st.dims();
        if lat.symbols.len() != st.len()
            || lh * cfg.downsample(l) != ph
            || lw * cfg.downsample(l) != pw
        {
            return Err(invalid(format!(
                "level {l} has no coded symbols of the expected size"
            )));
        }
        let f = cfg.downsample(l);
        let share = 1.0 / (f * f) as f64;
        let mut cell = vec![0.0; lh * lw];
        for ch in 0..c {
            for (i, v) in cell.iter_mut().enumerate() {
                let j = ch * lh * lw + i;
                *v += symbol_bits(lat.symbols[j], st.data()[j]);
            }
        }
        for py in 0..ph {
            let sy = reflect_index(py as isize, h);
            for px in 0..pw {
                let sx = reflect_index(px as isize, w);
                bits[sy * w + sx] += cell[(py / f) * lw + px / f] * share;
            }
        }
    }
    Ok(BitHeatmap {
        height: h,
        width: w,
        bits,
    })
}
