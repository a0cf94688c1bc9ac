//! Quantized CDF tables for the discretized Gaussian.

use crate::math::{bin_prob, normal_cdf};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

/// Largest table half-width; symbols beyond it land in the escape bins.
pub const MAX_HALF_WIDTH: i32 = 2048;

/// Cumulative frequencies over the support `[kmin, kmin + bins - 1]`.
/// `cdf[0] == 0`, `cdf[bins] == TOTAL`, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CdfTable {
    pub kmin: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn bins(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn kmax(&self) -> i32 {
        self.kmin + self.bins() as i32 - 1
    }

    pub fn freq(&self, k: i32) -> u32 {
        let i = (k - self.kmin) as usize;
        self.cdf[i + 1] - self.cdf[i]
    }

    pub fn contains(&self, k: i32) -> bool {
        k >= self.kmin && k <= self.kmax()
    }

    /// Ideal code length of `k` under the quantized table.
    pub fn bits(&self, k: i32) -> f64 {
        -(self.freq(k) as f64 / TOTAL as f64).log2()
    }

    /// Checks the construction invariants.
    pub fn is_valid(&self) -> bool {
        self.cdf.len() >= 2
            && self.cdf[0] == 0
            && *self.cdf.last().unwrap() == TOTAL
            && self.cdf.windows(2).all(|w| w[1] > w[0])
    }
}

/// Half-width of the coded support for scale `st`: `ceil(8·st)`, at least 1.
/// The outermost bins carry the tail mass.
pub fn half_width(st: f64) -> i32 {
    let h = (8.0 * st).ceil();
    if h.is_nan() || h < 1.0 {
        1
    } else if h > MAX_HALF_WIDTH as f64 {
        MAX_HALF_WIDTH
    } else {
        h as i32
    }
}

/// Probability of symbol `k` under the coded support for scale `st`, with
/// the tails folded into the edge bins. `k` must lie inside the support.
pub fn symbol_prob(k: i32, st: f64) -> f64 {
    let h = half_width(st);
    debug_assert!(k.abs() <= h);
    if k.abs() == h {
        // Mass of (-inf, -h + 0.5] (or its mirror).
        normal_cdf((-(h as f64) + 0.5) / st)
    } else {
        bin_prob(k as f64, st)
    }
}

/// Builds the table for a zero-mean discretized Gaussian of scale `st`.
pub fn build_cdf_table(st: f64) -> CdfTable {
    let h = half_width(st);
    let bins = (2 * h + 1) as usize;
    let spare = (TOTAL as usize - bins) as f64;
    let mut freqs: Vec<u32> = (-h..=h)
        .map(|k| 1 + (symbol_prob(k, st) * spare).floor() as u32)
        .collect();
    let sum: i64 = freqs.iter().map(|&f| f as i64).sum();
    let center = h as usize;
    let fixed = freqs[center] as i64 + (TOTAL as i64 - sum);
    debug_assert!(fixed >= 1);
    freqs[center] = fixed.max(1) as u32;
    let mut cdf = Vec::with_capacity(bins + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for f in freqs {
        acc += f;
        cdf.push(acc);
    }
    CdfTable { kmin: -h, cdf }
}
