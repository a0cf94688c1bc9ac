//! C ABI for the range coder.
//!
//! Tables travel as one flattened pool: `cdf` holds every table's cumulative
//! frequencies back to back, `offsets[t]..offsets[t + 1]` delimits table `t`
//! inside `cdf`, and `kmin[t]` is its first symbol. `table_index[i]` picks the
//! table for symbol `i`. Every function returns a status code and, on
//! failure, writes a NUL-terminated message into `msg` (truncated to
//! `msg_cap`).
//!
//! The `lrcv_rc_*_ref` functions are the reference implementation exported
//! by this crate. With the `native-coder` feature the codec links against an
//! external library exporting `lrcv_rc_encode` / `lrcv_rc_decode` with the
//! same signatures.

use std::slice;

use super::cdf::CdfTable;
use super::rangecoder::{decode_symbols, encode_symbols};
use crate::error::{Error, Result};

pub const LRCV_OK: i32 = 0;
pub const LRCV_ERR_ARGUMENT: i32 = 1;
pub const LRCV_ERR_SYMBOL: i32 = 2;
pub const LRCV_ERR_BUFFER: i32 = 3;
pub const LRCV_ERR_STREAM: i32 = 4;

/// A table pool flattened for the C boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatTables {
    pub cdf: Vec<u32>,
    pub offsets: Vec<u32>,
    pub kmin: Vec<i32>,
}

impl FlatTables {
    pub fn from_tables(tables: &[CdfTable]) -> Self {
        let mut flat = FlatTables {
            offsets: vec![0],
            ..Default::default()
        };
        for t in tables {
            flat.cdf.extend_from_slice(&t.cdf);
            flat.offsets.push(flat.cdf.len() as u32);
            flat.kmin.push(t.kmin);
        }
        flat
    }

    pub fn to_tables(&self) -> Result<Vec<CdfTable>> {
        if self.offsets.len() != self.kmin.len() + 1 || self.offsets.first() != Some(&0) {
            return Err(Error::InvalidInput("malformed table offsets".into()));
        }
        self.offsets
            .windows(2)
            .zip(&self.kmin)
            .map(|(w, &kmin)| {
                let (a, b) = (w[0] as usize, w[1] as usize);
                if a > b || b > self.cdf.len() {
                    return Err(Error::InvalidInput("table offset out of range".into()));
                }
                let t = CdfTable {
                    kmin,
                    cdf: self.cdf[a..b].to_vec(),
                };
                if !t.is_valid() {
                    return Err(Error::InvalidInput("invalid cdf table".into()));
                }
                Ok(t)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.kmin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kmin.is_empty()
    }
}

fn write_msg(msg: *mut u8, cap: usize, text: &str) {
    if msg.is_null() || cap == 0 {
        return;
    }
    let n = text.len().min(cap - 1);
    // SAFETY: caller guarantees `msg` points to `cap` writable bytes.
    unsafe {
        std::ptr::copy_nonoverlapping(text.as_ptr(), msg, n);
        *msg.add(n) = 0;
    }
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::SymbolOutOfRange { .. } => LRCV_ERR_SYMBOL,
        Error::Truncated { .. } | Error::Corrupt { .. } => LRCV_ERR_STREAM,
        _ => LRCV_ERR_ARGUMENT,
    }
}

unsafe fn view<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(p, n))
    }
}

unsafe fn pool(
    cdf: *const u32,
    cdf_len: usize,
    offsets: *const u32,
    kmin: *const i32,
    n_tables: usize,
) -> Option<FlatTables> {
    Some(FlatTables {
        cdf: view(cdf, cdf_len)?.to_vec(),
        offsets: view(offsets, n_tables + 1)?.to_vec(),
        kmin: view(kmin, n_tables)?.to_vec(),
    })
}

/// Encodes `n` symbols into `out`; the byte count goes to `out_len`.
///
/// # Safety
/// All pointers must reference buffers of the stated lengths
/// (`offsets` has `n_tables + 1` entries, `table_index` and `symbols` have
/// `n`, `out` has `out_cap`, `msg` has `msg_cap`).
#[no_mangle]
pub unsafe extern "C" fn lrcv_rc_encode_ref(
    symbols: *const i32,
    table_index: *const u32,
    n: usize,
    cdf: *const u32,
    cdf_len: usize,
    offsets: *const u32,
    kmin: *const i32,
    n_tables: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
    msg: *mut u8,
    msg_cap: usize,
) -> i32 {
    let (Some(flat), Some(syms), Some(idx)) = (
        pool(cdf, cdf_len, offsets, kmin, n_tables),
        view(symbols, n),
        view(table_index, n),
    ) else {
        write_msg(msg, msg_cap, "null pointer");
        return LRCV_ERR_ARGUMENT;
    };
    if out_len.is_null() {
        write_msg(msg, msg_cap, "null out_len");
        return LRCV_ERR_ARGUMENT;
    }
    let bytes = match flat.to_tables().and_then(|t| encode_symbols(syms, &t, idx)) {
        Ok(b) => b,
        Err(e) => {
            write_msg(msg, msg_cap, &e.to_string());
            return status_of(&e);
        }
    };
    *out_len = bytes.len();
    if bytes.len() > out_cap || out.is_null() {
        write_msg(msg, msg_cap, "output buffer too small");
        return LRCV_ERR_BUFFER;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    LRCV_OK
}

/// Decodes `n` symbols from `data` into `symbols_out`.
///
/// # Safety
/// Same buffer contract as [`lrcv_rc_encode_ref`]; `symbols_out` has room
/// for `n` values.
#[no_mangle]
pub unsafe extern "C" fn lrcv_rc_decode_ref(
    data: *const u8,
    data_len: usize,
    table_index: *const u32,
    n: usize,
    cdf: *const u32,
    cdf_len: usize,
    offsets: *const u32,
    kmin: *const i32,
    n_tables: usize,
    symbols_out: *mut i32,
    msg: *mut u8,
    msg_cap: usize,
) -> i32 {
    let (Some(flat), Some(bytes), Some(idx)) = (
        pool(cdf, cdf_len, offsets, kmin, n_tables),
        view(data, data_len),
        view(table_index, n),
    ) else {
        write_msg(msg, msg_cap, "null pointer");
        return LRCV_ERR_ARGUMENT;
    };
    if n > 0 && symbols_out.is_null() {
        write_msg(msg, msg_cap, "null output");
        return LRCV_ERR_ARGUMENT;
    }
    match flat
        .to_tables()
        .and_then(|t| decode_symbols(bytes, &t, idx))
    {
        Ok(s) => {
            std::ptr::copy_nonoverlapping(s.as_ptr(), symbols_out, s.len());
            LRCV_OK
        }
        Err(e) => {
            write_msg(msg, msg_cap, &e.to_string());
            status_of(&e)
        }
    }
}

#[cfg(feature = "native-coder")]
#[link(name = "lrcv_rc")]
extern "C" {
    fn lrcv_rc_encode(
        symbols: *const i32,
        table_index: *const u32,
        n: usize,
        cdf: *const u32,
        cdf_len: usize,
        offsets: *const u32,
        kmin: *const i32,
        n_tables: usize,
        out: *mut u8,
        out_cap: usize,
        out_len: *mut usize,
        msg: *mut u8,
        msg_cap: usize,
    ) -> i32;
    fn lrcv_rc_decode(
        data: *const u8,
        data_len: usize,
        table_index: *const u32,
        n: usize,
        cdf: *const u32,
        cdf_len: usize,
        offsets: *const u32,
        kmin: *const i32,
        n_tables: usize,
        symbols_out: *mut i32,
        msg: *mut u8,
        msg_cap: usize,
    ) -> i32;
}

type EncodeFn = unsafe extern "C" fn(
    *const i32,
    *const u32,
    usize,
    *const u32,
    usize,
    *const u32,
    *const i32,
    usize,
    *mut u8,
    usize,
    *mut usize,
    *mut u8,
    usize,
) -> i32;

type DecodeFn = unsafe extern "C" fn(
    *const u8,
    usize,
    *const u32,
    usize,
    *const u32,
    usize,
    *const u32,
    *const i32,
    usize,
    *mut i32,
    *mut u8,
    usize,
) -> i32;

/// Which coder implementation the codec calls through the C ABI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoderBackend {
    Reference,
    #[cfg(feature = "native-coder")]
    Native,
}

impl Default for CoderBackend {
    fn default() -> Self {
        #[cfg(feature = "native-coder")]
        {
            CoderBackend::Native
        }
        #[cfg(not(feature = "native-coder"))]
        {
            CoderBackend::Reference
        }
    }
}

const MSG_CAP: usize = 256;

fn ffi_error(status: i32, msg: &[u8]) -> Error {
    let end = msg.iter().position(|&b| b == 0).unwrap_or(msg.len());
    let text = String::from_utf8_lossy(&msg[..end]).into_owned();
    match status {
        LRCV_ERR_STREAM => Error::Corrupt {
            offset: 0,
            what: format!("range coder: {text}"),
        },
        _ => Error::InvalidInput(format!("range coder status {status}: {text}")),
    }
}

impl CoderBackend {
    fn fns(self) -> (EncodeFn, DecodeFn) {
        match self {
            CoderBackend::Reference => (lrcv_rc_encode_ref, lrcv_rc_decode_ref),
            #[cfg(feature = "native-coder")]
            CoderBackend::Native => (lrcv_rc_encode, lrcv_rc_decode),
        }
    }

    pub fn encode(self, symbols: &[i32], index: &[u32], tables: &FlatTables) -> Result<Vec<u8>> {
        if symbols.len() != index.len() || tables.offsets.len() != tables.kmin.len() + 1 {
            return Err(Error::InvalidInput("mismatched coder inputs".into()));
        }
        let (enc, _) = self.fns();
        // Generous first guess; retried once with the reported size.
        let mut cap = 64 + symbols.len() * 2;
        loop {
            let mut out = vec![0u8; cap];
            let mut len = 0usize;
            let mut msg = [0u8; MSG_CAP];
            // SAFETY: every buffer is a live Rust allocation of the stated size.
            let status = unsafe {
                enc(
                    symbols.as_ptr(),
                    index.as_ptr(),
                    symbols.len(),
                    tables.cdf.as_ptr(),
                    tables.cdf.len(),
                    tables.offsets.as_ptr(),
                    tables.kmin.as_ptr(),
                    tables.kmin.len(),
                    out.as_mut_ptr(),
                    out.len(),
                    &mut len,
                    msg.as_mut_ptr(),
                    MSG_CAP,
                )
            };
            match status {
                LRCV_OK => {
                    out.truncate(len);
                    return Ok(out);
                }
                LRCV_ERR_BUFFER if len > cap => cap = len,
                LRCV_ERR_SYMBOL => {
                    // Recover the structured error from the reference coder.
                    let t = tables.to_tables()?;
                    return Err(encode_symbols(symbols, &t, index)
                        .err()
                        .unwrap_or_else(|| ffi_error(status, &msg)));
                }
                _ => return Err(ffi_error(status, &msg)),
            }
        }
    }

    pub fn decode(self, data: &[u8], index: &[u32], tables: &FlatTables) -> Result<Vec<i32>> {
        if tables.offsets.len() != tables.kmin.len() + 1 {
            return Err(Error::InvalidInput("mismatched coder inputs".into()));
        }
        let (_, dec) = self.fns();
        let mut out = vec![0i32; index.len()];
        let mut msg = [0u8; MSG_CAP];
        // SAFETY: every buffer is a live Rust allocation of the stated size.
        let status = unsafe {
            dec(
                data.as_ptr(),
                data.len(),
                index.as_ptr(),
                index.len(),
                tables.cdf.as_ptr(),
                tables.cdf.len(),
                tables.offsets.as_ptr(),
                tables.kmin.as_ptr(),
                tables.kmin.len(),
                out.as_mut_ptr(),
                msg.as_mut_ptr(),
                MSG_CAP,
            )
        };
        if status == LRCV_OK {
            Ok(out)
        } else {
            Err(ffi_error(status, &msg))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::cdf::build_cdf_table;

    fn pool3() -> FlatTables {
        FlatTables::from_tables(&[
            build_cdf_table(0.05),
            build_cdf_table(1.0),
            build_cdf_table(4.0),
        ])
    }

    #[test]
    fn flat_pool_roundtrip() {
        let p = pool3();
        assert_eq!(p.offsets, vec![0, 4, 4 + 18, 4 + 18 + 66]);
        assert_eq!(FlatTables::from_tables(&p.to_tables().unwrap()), p);
    }

    #[test]
    fn backend_roundtrip() {
        let p = pool3();
        let syms = [0, 1, -1, 3, -8, 0, 30, -2];
        let idx = [0, 0, 1, 1, 1, 2, 2, 2];
        let b = CoderBackend::Reference;
        let bytes = b.encode(&syms, &idx, &p).unwrap();
        assert_eq!(b.decode(&bytes, &idx, &p).unwrap(), syms);
    }

    #[test]
    fn status_codes_and_messages() {
        let p = pool3();
        let err = CoderBackend::Reference.encode(&[5], &[0], &p).unwrap_err();
        assert!(matches!(err, Error::SymbolOutOfRange { symbol: 5, .. }));

        let mut out = [0u8; 2];
        let mut len = 0;
        let mut msg = [0u8; 64];
        let syms = [0i32; 10];
        let idx = [1u32; 10];
        let st = unsafe {
            lrcv_rc_encode_ref(
                syms.as_ptr(),
                idx.as_ptr(),
                10,
                p.cdf.as_ptr(),
                p.cdf.len(),
                p.offsets.as_ptr(),
                p.kmin.as_ptr(),
                3,
                out.as_mut_ptr(),
                out.len(),
                &mut len,
                msg.as_mut_ptr(),
                msg.len(),
            )
        };
        assert_eq!(st, LRCV_ERR_BUFFER);
        assert!(len > 2);
        assert!(msg.starts_with(b"output buffer too small\0"));

        let err = CoderBackend::Reference
            .decode(&[1, 2], &[0], &p)
            .unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
    }
}
