//! Quality maps on disk: 8-bit grayscale images (value / 255) or raw
//! big-endian `f32` with a 16-byte header.
//!
//! Raw header: `"QMAP"`, `u16` height, `u16` width, `u32` reserved, and four
//! zero padding bytes.

use std::fs;
use std::path::Path;

use super::QualityMap;
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"QMAP";
pub const RAW_HEADER_LEN: usize = 16;

pub fn to_raw_bytes(m: &QualityMap) -> Result<Vec<u8>> {
    let (h, w) = (m.height(), m.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidInput(format!(
            "{h}x{w} map too large for raw format"
        )));
    }
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * h * w);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(h as u16).to_be_bytes());
    out.extend_from_slice(&(w as u16).to_be_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_be_bytes());
    }
    Ok(out)
}

pub fn from_raw_bytes(bytes: &[u8]) -> Result<QualityMap> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::Truncated {
            offset: bytes.len(),
            what: "raw quality map header",
        });
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::BadMagic { offset: 0 });
    }
    let h = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
    let need = RAW_HEADER_LEN + 4 * h * w;
    if bytes.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            what: "raw quality map samples",
        });
    }
    if bytes.len() > need {
        return Err(Error::Corrupt {
            offset: need,
            what: "trailing bytes after raw quality map".into(),
        });
    }
    let values = bytes[RAW_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    QualityMap::new(h, w, values)
}

pub fn to_gray8(m: &QualityMap) -> image::GrayImage {
    image::GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([(m.get(y as usize, x as usize) * 255.0).round() as u8])
    })
}

pub fn from_gray8(img: &image::GrayImage) -> QualityMap {
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    QualityMap::new(h as usize, w as usize, values).expect("8-bit values lie in [0, 1]")
}

/// Loads a `.qmap` raw file or any grayscale-convertible image.
pub fn load(path: &Path) -> Result<QualityMap> {
    if path.extension().is_some_and(|e| e == "qmap") {
        return from_raw_bytes(&fs::read(path)?);
    }
    Ok(from_gray8(&image::open(path)?.to_luma8()))
}

pub fn save(m: &QualityMap, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "qmap") {
        fs::write(path, to_raw_bytes(m)?)?;
        return Ok(());
    }
    to_gray8(m).save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmap::{generate_initial_map, MapGenConfig};

    #[test]
    fn raw_roundtrip_and_header() {
        let m = generate_initial_map(20, 33, &MapGenConfig::default(), 2)
            .unwrap()
            .map;
        let bytes = to_raw_bytes(&m).unwrap();
        assert_eq!(&bytes[..8], &[b'Q', b'M', b'A', b'P', 0, 20, 0, 33]);
        assert_eq!(bytes.len(), 16 + 4 * 20 * 33);
        let back = from_raw_bytes(&bytes).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(matches!(
            from_raw_bytes(&bytes[..100]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_raw_bytes(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_initial_map(24, 24, &MapGenConfig::default(), 3)
            .unwrap()
            .map;
        let p = dir.path().join("m.png");
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
