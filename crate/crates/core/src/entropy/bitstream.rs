//! Container format.
//!
//! ```text
//! header (14 bytes, big-endian)
//!   "LRCV" | version u8 | flags u8 | width u16 | height u16 | frames u16
//!   | levels u8 | check u8
//! per frame
//!   qmap_len u32 | qmap payload
//!   per level: len u32 | range coded payload
//! ```
//!
//! `flags` bit 0 marks a signaled quality map; other bits must be zero. When
//! the bit is clear every `qmap_len` is zero. `check` is a CRC-8
//! (polynomial 0x07) over the first 13 header bytes.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LRCV";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const FLAG_QMAP: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub frames: u16,
    pub levels: u8,
    pub qmap_signaled: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FramePayload {
    pub qmap: Vec<u8>,
    pub levels: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: StreamHeader,
    pub frames: Vec<FramePayload>,
}

pub fn crc8(bytes: &[u8]) -> u8 {
    let mut c = 0u8;
    for &b in bytes {
        c ^= b;
        for _ in 0..8 {
            c = if c & 0x80 != 0 {
                (c << 1) ^ 0x07
            } else {
                c << 1
            };
        }
    }
    c
}

fn push_block(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    let n =
        u32::try_from(bytes.len()).map_err(|_| Error::InvalidInput("payload over 4 GiB".into()))?;
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if self.frames.len() != h.frames as usize {
            return Err(Error::InvalidInput(format!(
                "header says {} frames, have {}",
                h.frames,
                self.frames.len()
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(if h.qmap_signaled { FLAG_QMAP } else { 0 });
        out.extend_from_slice(&h.width.to_be_bytes());
        out.extend_from_slice(&h.height.to_be_bytes());
        out.extend_from_slice(&h.frames.to_be_bytes());
        out.push(h.levels);
        out.push(crc8(&out));
        for f in &self.frames {
            if f.levels.len() != h.levels as usize {
                return Err(Error::InvalidInput("frame level count mismatch".into()));
            }
            if !h.qmap_signaled && !f.qmap.is_empty() {
                return Err(Error::InvalidInput("qmap payload without flag".into()));
            }
            push_block(&mut out, &f.qmap)?;
            for l in &f.levels {
                push_block(&mut out, l)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                offset: bytes.len(),
                what: "stream header",
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { offset: 0 });
        }
        if crc8(&bytes[..HEADER_LEN - 1]) != bytes[HEADER_LEN - 1] {
            return Err(Error::Corrupt {
                offset: HEADER_LEN - 1,
                what: "header check byte mismatch".into(),
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::Version {
                found: bytes[4] as u32,
                expected: VERSION as u32,
            });
        }
        let flags = bytes[5];
        if flags & !FLAG_QMAP != 0 {
            return Err(Error::Corrupt {
                offset: 5,
                what: format!("unknown flag bits {flags:#04x}"),
            });
        }
        let be16 = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let header = StreamHeader {
            width: be16(6),
            height: be16(8),
            frames: be16(10),
            levels: bytes[12],
            qmap_signaled: flags & FLAG_QMAP != 0,
        };
        if header.frames > 0 && (header.width == 0 || header.height == 0 || header.levels == 0) {
            return Err(Error::Corrupt {
                offset: 6,
                what: "zero dimension in header".into(),
            });
        }
        let mut pos = HEADER_LEN;
        let mut block = |what: &'static str| -> Result<&[u8]> {
            if bytes.len() < pos + 4 {
                return Err(Error::Truncated { offset: pos, what });
            }
            let n = u32::from_be_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]])
                as usize;
            pos += 4;
            if bytes.len() - pos < n {
                return Err(Error::Truncated { offset: pos, what });
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let mut frames = Vec::with_capacity(header.frames as usize);
        for _ in 0..header.frames {
            let qmap = block("quality map payload")?.to_vec();
            if !header.qmap_signaled && !qmap.is_empty() {
                return Err(Error::Corrupt {
                    offset: 0,
                    what: "quality map payload present without flag".into(),
                });
            }
            let levels = (0..header.levels)
                .map(|_| block("level payload").map(<[u8]>::to_vec))
                .collect::<Result<Vec<_>>>()?;
            frames.push(FramePayload { qmap, levels });
        }
        if pos != bytes.len() {
            return Err(Error::Corrupt {
                offset: pos,
                what: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        Ok(Bitstream { header, frames })
    }
}
