//! Likelihoods, CDF tables, the range coder and the container format.

pub mod bitstream;
pub mod cdf;
pub mod ffi;
pub mod pmf;
pub mod rangecoder;

use std::collections::HashMap;

pub use bitstream::{Bitstream, FramePayload, StreamHeader};
pub use cdf::{build_cdf_table, half_width, CdfTable};
pub use ffi::{CoderBackend, FlatTables};
pub use pmf::{clamp_symbol, estimate_rate, gaussian_pmf, symbol_bits, RateEstimate};

use crate::error::Result;

/// Integer symbols of one latent level with their per-symbol tables.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolPlane {
    pub symbols: Vec<i32>,
    pub table_ids: Vec<u32>,
    pub tables: FlatTables,
}

/// Builds the deduplicated table pool for a set of normalized scales.
pub fn tables_for_scales(scales: &[f64]) -> (FlatTables, Vec<u32>) {
    let mut seen: HashMap<u64, u32> = HashMap::new();
    let mut tables = Vec::new();
    let ids = scales
        .iter()
        .map(|&st| {
            *seen.entry(st.to_bits()).or_insert_with(|| {
                tables.push(build_cdf_table(st));
                (tables.len() - 1) as u32
            })
        })
        .collect();
    (FlatTables::from_tables(&tables), ids)
}

impl SymbolPlane {
    /// Clamps each symbol into its table's support and attaches tables.
    pub fn new(symbols: &[i32], scales: &[f64]) -> Self {
        let (tables, table_ids) = tables_for_scales(scales);
        let symbols = symbols
            .iter()
            .zip(scales)
            .map(|(&k, &st)| clamp_symbol(k, st))
            .collect();
        SymbolPlane {
            symbols,
            table_ids,
            tables,
        }
    }

    pub fn encode(&self, backend: CoderBackend) -> Result<Vec<u8>> {
        backend.encode(&self.symbols, &self.table_ids, &self.tables)
    }

    /// Decodes a payload given the scales the decoder reconstructed.
    pub fn decode(data: &[u8], scales: &[f64], backend: CoderBackend) -> Result<Vec<i32>> {
        let (tables, ids) = tables_for_scales(scales);
        backend.decode(data, &ids, &tables)
    }
}
