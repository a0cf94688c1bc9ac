//! Whole sequences to and from container bytes.

use crate::entropy::{Bitstream, CoderBackend, FramePayload, StreamHeader, SymbolPlane};
use crate::error::{Error, Result};
use crate::model::{Codec, FrameEncoding, Mode};
use crate::qmap::{decode_qmap, encode_qmap, QualityMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct StreamOptions {
    /// Transmit the quality maps in the stream.
    pub signal_qmap: bool,
    pub backend: CoderBackend,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            signal_qmap: true,
            backend: CoderBackend::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncodedFrame {
    pub encoding: FrameEncoding,
    /// The map the frame was coded with (the decoded map when signaled).
    pub qmap: QualityMap,
    pub qmap_bytes: usize,
    pub level_bytes: Vec<usize>,
}

impl EncodedFrame {
    pub fn latent_bytes(&self) -> usize {
        self.level_bytes.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub bytes: Vec<u8>,
    pub frames: Vec<EncodedFrame>,
}

#[derive(Clone, Debug)]
pub struct DecodedSequence {
    pub frames: Vec<Tensor>,
    pub maps: Vec<QualityMap>,
}

fn dims_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds 65535")))
}

/// Codes `frames` (each `[1,3,H,W]`) with per-frame maps.
pub fn encode_sequence(
    codec: &Codec,
    frames: &[Tensor],
    maps: &[QualityMap],
    opts: StreamOptions,
) -> Result<EncodedSequence> {
    if frames.len() != maps.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames but {} quality maps",
            frames.len(),
            maps.len()
        )));
    }
    let (h, w) = frames.first().map_or((0, 0), |f| (f.h(), f.w()));
    let header = StreamHeader {
        width: dims_u16(w, "width")?,
        height: dims_u16(h, "height")?,
        frames: dims_u16(frames.len(), "frame count")?,
        levels: codec.config().levels as u8,
        qmap_signaled: opts.signal_qmap,
    };
    let mut state = if frames.is_empty() {
        None
    } else {
        Some(codec.init_temporal_state(h, w)?)
    };
    let mut payloads = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    for (x, m) in frames.iter().zip(maps) {
        let (qmap_payload, used) = if opts.signal_qmap {
            let bytes = encode_qmap(m);
            let used = decode_qmap(&bytes, m.height(), m.width())?;
            (bytes, used)
        } else {
            (Vec::new(), m.clone())
        };
        let st = state.as_ref().expect("state exists for non-empty input");
        let enc = codec.encode_frame(x, &used, st, Mode::Code)?;
        let levels = enc
            .latents
            .levels
            .iter()
            .zip(&enc.priors)
            .map(|(lat, p)| {
                let plane = SymbolPlane::new(&lat.symbols, p.scales().data());
                debug_assert_eq!(plane.symbols, lat.symbols);
                plane.encode(opts.backend)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(EncodedFrame {
            qmap: used,
            qmap_bytes: qmap_payload.len(),
            level_bytes: levels.iter().map(Vec::len).collect(),
            encoding: enc.clone(),
        });
        payloads.push(FramePayload {
            qmap: qmap_payload,
            levels,
        });
        state = Some(enc.state);
    }
    let bytes = Bitstream {
        header,
        frames: payloads,
    }
    .to_bytes()?;
    Ok(EncodedSequence {
        bytes,
        frames: reports,
    })
}

/// Decodes a container. `maps` supplies the quality maps when the stream
/// does not carry them.
pub fn decode_sequence(
    codec: &Codec,
    bytes: &[u8],
    maps: Option<&[QualityMap]>,
    backend: CoderBackend,
) -> Result<DecodedSequence> {
    let bs = Bitstream::from_bytes(bytes)?;
    let hd = bs.header;
    if hd.levels as usize != codec.config().levels {
        return Err(Error::Corrupt {
            offset: 12,
            what: format!(
                "stream has {} levels, checkpoint has {}",
                hd.levels,
                codec.config().levels
            ),
        });
    }
    let (h, w) = (hd.height as usize, hd.width as usize);
    if !hd.qmap_signaled {
        match maps {
            Some(m) if m.len() == bs.frames.len() => {}
            _ => {
                return Err(Error::InvalidInput(
                    "stream carries no quality maps; supply one per frame".into(),
                ))
            }
        }
    }
    let mut out = DecodedSequence {
        frames: Vec::with_capacity(bs.frames.len()),
        maps: Vec::with_capacity(bs.frames.len()),
    };
    if bs.frames.is_empty() {
        return Ok(out);
    }
    let mut state = codec.init_temporal_state(h, w)?;
    for (t, fp) in bs.frames.iter().enumerate() {
        let m = if hd.qmap_signaled {
            decode_qmap(&fp.qmap, h, w)?
        } else {
            let m = maps.expect("checked above")[t].clone();
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::InvalidInput(
                    "quality map size differs from stream".into(),
                ));
            }
            m
        };
        let mut next =
            |l: usize, st: &Tensor| SymbolPlane::decode(&fp.levels[l], st.data(), backend);
        let (recon, s, _) = codec.decode_frame_with(&mut next, &m, &state)?;
        state = s;
        out.frames.push(recon);
        out.maps.push(m);
    }
    Ok(out)
}
