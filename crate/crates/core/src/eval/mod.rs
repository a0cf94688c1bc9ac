//! Metrics, rate-distortion sweeps, BD-rate, bit heatmaps and
//! encoder-side quality-map optimization.

pub mod bdrate;
pub mod heatmap;
pub mod metrics;
pub mod optimize;
pub mod plot;

use std::io::Write;

use serde::Serialize;

pub use bdrate::{bd_rate, Pchip, RdCurve, RdPoint};
pub use heatmap::{bit_heatmap, BitHeatmap};
pub use metrics::{bpp, psnr, psnr_from_mse, squared_error, PSNR_CAP};
pub use optimize::{optimize_qmap, OptimizeOptions, OptimizedMaps};

use crate::entropy::bitstream::HEADER_LEN;
use crate::error::{invalid, Error, Result};
use crate::model::Codec;
use crate::qmap::{uniform_map, QualityMap};
use crate::stream::{encode_sequence, EncodedSequence, StreamOptions};
use crate::tensor::Tensor;

/// Bytes of framing per level and per quality map in the container.
const LENGTH_FIELD: usize = 4;

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub clip: usize,
    pub frame: usize,
    /// Uniform level, λ target or any other run label.
    pub setting: String,
    pub bpp_total: f64,
    pub bpp_latent: f64,
    pub bpp_qmap: f64,
    pub psnr: f64,
    pub psnr_in_region: Option<f64>,
    pub psnr_out_region: Option<f64>,
}

/// Codes one clip and measures every frame. With `region`, PSNR is also
/// reported inside and outside the mask.
pub fn evaluate_clip(
    codec: &Codec,
    clip: usize,
    setting: &str,
    frames: &[Tensor],
    maps: &[QualityMap],
    region: Option<&[bool]>,
    opts: StreamOptions,
) -> Result<(Vec<FrameMetrics>, EncodedSequence)> {
    let enc = encode_sequence(codec, frames, maps, opts)?;
    let outside: Option<Vec<bool>> = region.map(|m| m.iter().map(|b| !b).collect());
    let levels = codec.config().levels;
    let mut rows = Vec::with_capacity(frames.len());
    for (t, (x, f)) in frames.iter().zip(&enc.frames).enumerate() {
        let (h, w) = (x.h(), x.w());
        let header_share = HEADER_LEN as f64 / frames.len() as f64;
        let framing = LENGTH_FIELD * (levels + 1);
        let total = header_share + (framing + f.qmap_bytes + f.latent_bytes()) as f64;
        let psnr_in = region
            .map(|m| psnr(x, &f.encoding.recon, Some(m)))
            .transpose()?;
        let psnr_out = match &outside {
            Some(m) if m.iter().any(|&b| b) => Some(psnr(x, &f.encoding.recon, Some(m))?),
            _ => None,
        };
        rows.push(FrameMetrics {
            clip,
            frame: t,
            setting: setting.to_string(),
            bpp_total: bpp(8.0 * total, h, w),
            bpp_latent: bpp(8.0 * f.latent_bytes() as f64, h, w),
            bpp_qmap: bpp(8.0 * f.qmap_bytes as f64, h, w),
            psnr: psnr(x, &f.encoding.recon, None)?,
            psnr_in_region: psnr_in,
            psnr_out_region: psnr_out,
        });
    }
    Ok((rows, enc))
}

/// Averages over a set of frame rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub setting: String,
    pub frames: usize,
    pub bpp_total: f64,
    pub bpp_latent: f64,
    pub bpp_qmap: f64,
    pub psnr: f64,
}

impl Summary {
    pub fn of(setting: &str, rows: &[FrameMetrics]) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("no frames to summarize"));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&FrameMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Summary {
            setting: setting.to_string(),
            frames: rows.len(),
            bpp_total: mean(|r| r.bpp_total),
            bpp_latent: mean(|r| r.bpp_latent),
            bpp_qmap: mean(|r| r.bpp_qmap),
            psnr: mean(|r| r.psnr),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub levels: Vec<f64>,
    pub points: Vec<Summary>,
    pub rows: Vec<FrameMetrics>,
}

impl Sweep {
    /// The sweep as a curve over latent bpp.
    pub fn curve(&self, label: &str) -> Result<RdCurve> {
        RdCurve::new(
            label,
            self.points
                .iter()
                .map(|p| RdPoint {
                    label: p.setting.clone(),
                    bpp: p.bpp_latent,
                    psnr: p.psnr,
                })
                .collect(),
        )
    }
}

/// Codes every clip with a uniform map at each level and averages bpp and
/// PSNR over all frames of all clips.
pub fn sweep_uniform(
    codec: &Codec,
    clips: &[Vec<Tensor>],
    levels: &[f64],
    opts: StreamOptions,
) -> Result<Sweep> {
    if clips.iter().all(|c| c.is_empty()) {
        return Err(invalid("sweep needs at least one frame"));
    }
    let mut points = Vec::with_capacity(levels.len());
    let mut all = Vec::new();
    for &level in levels {
        let setting = format!("{level}");
        let mut rows = Vec::new();
        for (ci, clip) in clips.iter().enumerate() {
            let Some(first) = clip.first() else { continue };
            let m = uniform_map(first.h(), first.w(), level)?;
            let maps = vec![m; clip.len()];
            rows.extend(evaluate_clip(codec, ci, &setting, clip, &maps, None, opts)?.0);
        }
        points.push(Summary::of(&setting, &rows)?);
        all.extend(rows);
    }
    Ok(Sweep {
        levels: levels.to_vec(),
        points,
        rows: all,
    })
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests;
