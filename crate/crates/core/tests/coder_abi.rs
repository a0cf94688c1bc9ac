use lrc_core::entropy::ffi::{
    lrcv_rc_decode_ref, lrcv_rc_encode_ref, LRCV_ERR_BUFFER, LRCV_ERR_STREAM, LRCV_ERR_SYMBOL,
    LRCV_OK,
};
use lrc_core::entropy::{build_cdf_table, CoderBackend, FlatTables};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pool() -> FlatTables {
    FlatTables::from_tables(&[
        build_cdf_table(0.3),
        build_cdf_table(2.0),
        build_cdf_table(40.0),
    ])
}

fn message(msg: &[u8]) -> String {
    let end = msg.iter().position(|&b| b == 0).unwrap();
    String::from_utf8(msg[..end].to_vec()).unwrap()
}

fn raw_encode(
    symbols: &[i32],
    index: &[u32],
    t: &FlatTables,
    cap: usize,
) -> (i32, Vec<u8>, String) {
    let mut out = vec![0u8; cap];
    let mut len = 0usize;
    let mut msg = [0u8; 128];
    let status = unsafe {
        lrcv_rc_encode_ref(
            symbols.as_ptr(),
            index.as_ptr(),
            symbols.len(),
            t.cdf.as_ptr(),
            t.cdf.len(),
            t.offsets.as_ptr(),
            t.kmin.as_ptr(),
            t.kmin.len(),
            out.as_mut_ptr(),
            out.len(),
            &mut len,
            msg.as_mut_ptr(),
            msg.len(),
        )
    };
    out.truncate(len.min(cap));
    (status, out, message(&msg))
}

fn raw_decode(data: &[u8], index: &[u32], t: &FlatTables) -> (i32, Vec<i32>) {
    let mut out = vec![0i32; index.len()];
    let mut msg = [0u8; 128];
    let status = unsafe {
        lrcv_rc_decode_ref(
            data.as_ptr(),
            data.len(),
            index.as_ptr(),
            index.len(),
            t.cdf.as_ptr(),
            t.cdf.len(),
            t.offsets.as_ptr(),
            t.kmin.as_ptr(),
            t.kmin.len(),
            out.as_mut_ptr(),
            msg.as_mut_ptr(),
            msg.len(),
        )
    };
    (status, out)
}

fn message_stream(n: usize, seed: u64) -> (Vec<i32>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = pool().to_tables().unwrap();
    let index: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let symbols = index
        .iter()
        .map(|&i| {
            let tab = &t[i as usize];
            rng.gen_range(tab.kmin..=tab.kmax())
        })
        .collect();
    (symbols, index)
}

#[test]
fn raw_calls_roundtrip() {
    let t = pool();
    let (symbols, index) = message_stream(5000, 1);
    let (status, bytes, _) = raw_encode(&symbols, &index, &t, 1 << 16);
    assert_eq!(status, LRCV_OK);
    let (status, back) = raw_decode(&bytes, &index, &t);
    assert_eq!(status, LRCV_OK);
    assert_eq!(back, symbols);
}

#[test]
fn raw_and_wrapped_calls_agree() {
    let t = pool();
    let (symbols, index) = message_stream(800, 2);
    let (_, raw, _) = raw_encode(&symbols, &index, &t, 1 << 14);
    let wrapped = CoderBackend::Reference
        .encode(&symbols, &index, &t)
        .unwrap();
    assert_eq!(raw, wrapped);
    assert_eq!(
        CoderBackend::Reference
            .decode(&wrapped, &index, &t)
            .unwrap(),
        symbols
    );
}

#[test]
fn small_buffer_reports_needed_size() {
    let t = pool();
    let (symbols, index) = message_stream(2000, 3);
    let (_, full, _) = raw_encode(&symbols, &index, &t, 1 << 16);
    let mut len = 0usize;
    let mut out = vec![0u8; 8];
    let mut msg = [0u8; 64];
    let status = unsafe {
        lrcv_rc_encode_ref(
            symbols.as_ptr(),
            index.as_ptr(),
            symbols.len(),
            t.cdf.as_ptr(),
            t.cdf.len(),
            t.offsets.as_ptr(),
            t.kmin.as_ptr(),
            t.kmin.len(),
            out.as_mut_ptr(),
            out.len(),
            &mut len,
            msg.as_mut_ptr(),
            msg.len(),
        )
    };
    assert_eq!(status, LRCV_ERR_BUFFER);
    assert_eq!(len, full.len());
    assert!(!message(&msg).is_empty());
}

#[test]
fn out_of_table_symbol_is_rejected() {
    let t = pool();
    let (status, _, msg) = raw_encode(&[0, 10_000], &[0, 0], &t, 256);
    assert_eq!(status, LRCV_ERR_SYMBOL);
    assert!(msg.contains("10000"), "{msg}");
}

#[test]
fn short_stream_is_a_stream_error() {
    let t = pool();
    let (symbols, index) = message_stream(3000, 4);
    let (_, bytes, _) = raw_encode(&symbols, &index, &t, 1 << 16);
    let (status, _) = raw_decode(&bytes[..2], &index, &t);
    assert_eq!(status, LRCV_ERR_STREAM);
}

#[test]
fn message_is_truncated_to_capacity() {
    let t = pool();
    let mut out = [0u8; 64];
    let mut len = 0usize;
    let mut msg = [0xAAu8; 6];
    let status = unsafe {
        lrcv_rc_encode_ref(
            [5000i32].as_ptr(),
            [0u32].as_ptr(),
            1,
            t.cdf.as_ptr(),
            t.cdf.len(),
            t.offsets.as_ptr(),
            t.kmin.as_ptr(),
            t.kmin.len(),
            out.as_mut_ptr(),
            out.len(),
            &mut len,
            msg.as_mut_ptr(),
            msg.len(),
        )
    };
    assert_eq!(status, LRCV_ERR_SYMBOL);
    assert_eq!(msg[5], 0);
}
