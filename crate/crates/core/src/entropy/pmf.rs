use crate::math::{bin_prob, bits_of, PROB_FLOOR};

use super::cdf::{half_width, symbol_prob};

/// Probability of integer offset `k` under a zero-mean Gaussian of
/// normalized scale `st` (scale divided by step), floored.
pub fn gaussian_pmf(k: i32, st: f64) -> f64 {
    bin_prob(k as f64, st).max(PROB_FLOOR)
}

/// Clamps a symbol to the coded support of its table.
pub fn clamp_symbol(k: i32, st: f64) -> i32 {
    let h = half_width(st);
    k.clamp(-h, h)
}

/// Estimated bits for one coded symbol, including the tail folding at the
/// support edges.
pub fn symbol_bits(k: i32, st: f64) -> f64 {
    bits_of(symbol_prob(clamp_symbol(k, st), st))
}

/// Rate summary of a coded frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateEstimate {
    pub level_bits: Vec<f64>,
    pub pixels: usize,
}

impl RateEstimate {
    pub fn total_bits(&self) -> f64 {
        self.level_bits.iter().sum()
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits() / self.pixels as f64
    }
}

/// Code-mode rate estimate: symbols and normalized scales per level.
pub fn estimate_rate(levels: &[(&[i32], &[f64])], pixels: usize) -> RateEstimate {
    let level_bits = levels
        .iter()
        .map(|(k, st)| {
            k.iter()
                .zip(st.iter())
                .map(|(&k, &s)| symbol_bits(k, s))
                .sum()
        })
        .collect();
    RateEstimate { level_bits, pixels }
}
