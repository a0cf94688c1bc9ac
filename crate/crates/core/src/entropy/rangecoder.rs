//! Reference range coder over 16-bit quantized CDF tables.
//!
//! 64-bit `low`, 32-bit `range`, byte-wise renormalization with carry
//! propagation through a cached byte and a run of pending `0xFF` bytes.
//! The first byte a coder of this shape produces is always zero and is not
//! stored. The flush writes four bytes, so an empty message is four bytes
//! long and every stream is at least four bytes long.

use super::cdf::{CdfTable, PRECISION_BITS, TOTAL};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

pub const FLUSH_BYTES: usize = 4;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            first: true,
            out: Vec::new(),
        }
    }

    fn emit(&mut self, b: u8) {
        if self.first {
            debug_assert_eq!(b, 0);
            self.first = false;
        } else {
            self.out.push(b);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut b = self.cache;
            loop {
                self.emit(b.wrapping_add(carry));
                b = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^16`.
    pub fn encode_interval(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, index: usize, symbol: i32, table: &CdfTable) -> Result<()> {
        if !table.contains(symbol) {
            return Err(Error::SymbolOutOfRange {
                index,
                symbol,
                min: table.kmin,
                max: table.kmax(),
            });
        }
        let i = (symbol - table.kmin) as usize;
        self.encode_interval(table.cdf[i], table.cdf[i + 1] - table.cdf[i]);
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..=FLUSH_BYTES {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..FLUSH_BYTES {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated {
            offset: self.pos,
            what: "range coded payload",
        })?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32> {
        let r = self.range >> PRECISION_BITS;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(Error::Corrupt {
                offset: self.pos,
                what: "range decoder target outside table".into(),
            });
        }
        // Last i with cdf[i] <= v.
        let i = table.cdf.partition_point(|&c| c <= v) - 1;
        let (lo, hi) = (table.cdf[i], table.cdf[i + 1]);
        self.code -= r * lo;
        self.range = r * (hi - lo);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(table.kmin + i as i32)
    }
}

/// Encodes `symbols[i]` with `tables[index[i]]`.
pub fn encode_symbols(symbols: &[i32], tables: &[CdfTable], index: &[u32]) -> Result<Vec<u8>> {
    if symbols.len() != index.len() {
        return Err(Error::InvalidInput(format!(
            "{} symbols but {} table indices",
            symbols.len(),
            index.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (i, (&s, &t)) in symbols.iter().zip(index).enumerate() {
        let table = tables
            .get(t as usize)
            .ok_or_else(|| Error::InvalidInput(format!("table index {t} out of range")))?;
        enc.encode(i, s, table)?;
    }
    Ok(enc.finish())
}

/// Decodes `index.len()` symbols; the whole payload must be consumed.
pub fn decode_symbols(data: &[u8], tables: &[CdfTable], index: &[u32]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(data)?;
    let mut out = Vec::with_capacity(index.len());
    for &t in index {
        let table = tables
            .get(t as usize)
            .ok_or_else(|| Error::InvalidInput(format!("table index {t} out of range")))?;
        out.push(dec.decode(table)?);
    }
    if dec.position() != data.len() {
        return Err(Error::Corrupt {
            offset: dec.position(),
            what: format!(
                "{} unread bytes after last symbol",
                data.len() - dec.position()
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::cdf::build_cdf_table;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary(p0: u32) -> CdfTable {
        CdfTable {
            kmin: 0,
            cdf: vec![0, p0, TOTAL],
        }
    }

    #[test]
    fn empty_message_is_flush_only() {
        let bytes = encode_symbols(&[], &[], &[]).unwrap();
        assert_eq!(bytes.len(), FLUSH_BYTES);
        assert!(decode_symbols(&bytes, &[], &[]).unwrap().is_empty());
    }

    #[test]
    fn eight_fair_bits_take_one_byte_plus_flush() {
        let t = vec![binary(1 << 15)];
        let syms = [1, 0, 1, 1, 0, 0, 1, 0];
        let bytes = encode_symbols(&syms, &t, &[0; 8]).unwrap();
        assert_eq!(bytes.len(), 1 + FLUSH_BYTES);
        assert_eq!(decode_symbols(&bytes, &t, &[0; 8]).unwrap(), syms);
    }

    #[test]
    fn skewed_binary_near_entropy() {
        // 99% / 1%, compared with the empirical code length of the draw.
        let p0 = (0.99 * TOTAL as f64).round() as u32;
        let t = vec![binary(p0)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let syms: Vec<i32> = (0..n).map(|_| (rng.gen::<f64>() >= 0.99) as i32).collect();
        let idx = vec![0u32; n];
        let bytes = encode_symbols(&syms, &t, &idx).unwrap();
        let ideal: f64 = syms.iter().map(|&s| t[0].bits(s)).sum();
        let bits = 8.0 * bytes.len() as f64;
        assert!(bits <= ideal * 1.001 + 128.0, "{bits} vs {ideal}");
        let ones = syms.iter().filter(|&&s| s == 1).count() as f64;
        let entropy = -(n as f64 - ones) * 0.99f64.log2() - ones * 0.01f64.log2();
        assert!(
            (bits - entropy).abs() / entropy < 0.01,
            "{bits} vs {entropy}"
        );
        assert_eq!(decode_symbols(&bytes, &t, &idx).unwrap(), syms);
    }

    #[test]
    fn random_gaussian_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tables: Vec<CdfTable> = (0..50)
            .map(|i| build_cdf_table(0.05 * 1.2f64.powi(i)))
            .collect();
        let n = 50_000;
        let index: Vec<u32> = (0..n).map(|_| rng.gen_range(0..50)).collect();
        let syms: Vec<i32> = index
            .iter()
            .map(|&t| {
                let tb = &tables[t as usize];
                rng.gen_range(tb.kmin..=tb.kmax())
            })
            .collect();
        let bytes = encode_symbols(&syms, &tables, &index).unwrap();
        assert_eq!(decode_symbols(&bytes, &tables, &index).unwrap(), syms);
    }

    #[test]
    fn out_of_support_symbol_is_rejected() {
        let t = vec![build_cdf_table(0.1)];
        let err = encode_symbols(&[0, 5], &t, &[0, 0]).unwrap_err();
        assert!(matches!(
            err,
            Error::SymbolOutOfRange {
                index: 1,
                symbol: 5,
                ..
            }
        ));
    }

    #[test]
    fn truncated_or_garbage_streams_fail_cleanly() {
        let t = vec![build_cdf_table(3.0)];
        let syms: Vec<i32> = (0..200).map(|i| (i % 7) - 3).collect();
        let idx = vec![0u32; 200];
        let bytes = encode_symbols(&syms, &t, &idx).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                decode_symbols(&bytes[..cut], &t, &idx).is_err(),
                "cut {cut}"
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let junk: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
            let _ = decode_symbols(&junk, &t, &idx);
        }
    }
}
