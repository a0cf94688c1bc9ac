use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use lrc_core::entropy::CoderBackend;
use lrc_core::eval::{self, plot, OptimizeOptions, Summary};
use lrc_core::model::{Checkpoint, Codec};
use lrc_core::qmap::{
    self, compose_region_map, generate_sequence, uniform_map, MapGenConfig, QualityMap, RegionShape,
};
use lrc_core::stream::{decode_sequence, encode_sequence, StreamOptions};
use lrc_core::tensor::Tensor;
use lrc_core::train::{data, TrainConfig, Trainer};

/// Exit statuses.
const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_STREAM: u8 = 4;

#[derive(Parser)]
#[command(
    name = "lrcv",
    version,
    about = "Variable-rate neural video codec with pixel-level quality maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec from a TOML schedule.
    Train(TrainArgs),
    /// Compress a directory of frames.
    Encode(EncodeArgs),
    /// Decompress a bitstream into PNG frames.
    Decode(DecodeArgs),
    /// Code a clip and report per-frame metrics, heatmaps and maps.
    Eval(EvalArgs),
    /// Rate-distortion sweep over uniform quality maps.
    Sweep(SweepArgs),
    /// Generate a synthetic quality-map sequence.
    Genmap(GenmapArgs),
    /// Search per-frame quality maps for a rate-distortion target.
    OptimizeMap(OptimizeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    /// A map file, `uniform:<v>` or `rect:<x,y,w,h,v,bg>`.
    #[arg(long, default_value = "uniform:0.5")]
    qmap: String,
    /// Leave the quality map out of the stream.
    #[arg(long)]
    no_signal: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bitstream: PathBuf,
    /// Quality map for streams coded without one.
    #[arg(long)]
    qmap: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    frames: PathBuf,
    /// Compare against these frames instead of coding.
    #[arg(long)]
    recon: Option<PathBuf>,
    #[arg(long, default_value = "uniform:0.5")]
    qmap: String,
    /// Region for in/out PSNR, `x,y,w,h`; a `rect:` map supplies its own.
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clip directory; repeat for several clips. A directory of
    /// sub-directories counts as one clip per sub-directory.
    #[arg(long, required = true)]
    frames: Vec<PathBuf>,
    /// Comma-separated levels; defaults to 0, 0.05, ..., 1.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenmapArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Length of the generated sequence.
    #[arg(long, alias = "count", default_value_t = 1)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weights of smooth fields, sharp shapes and near-constant maps.
    #[arg(long, value_delimiter = ',')]
    mix: Option<Vec<f64>>,
    /// Per-frame change bound away from moving shape boundaries.
    #[arg(long)]
    delta: Option<f64>,
    /// Render this map spec instead of a random sequence.
    #[arg(long)]
    qmap: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    /// Comma-separated λ targets.
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            err: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Genmap(a) => genmap(a),
        Command::OptimizeMap(a) => optimize(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load_codec(path: &Path, code: u8) -> Result<Codec, Failure> {
    Checkpoint::load(path)
        .and_then(|ck| Codec::from_checkpoint(&ck))
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .exit_with(code)
}

fn load_frames(dir: &Path) -> anyhow::Result<Vec<Tensor>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading frames from {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG frames in {}", dir.display());
    }
    let frames = files
        .iter()
        .map(|f| data::load_frame(f).with_context(|| format!("loading {}", f.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (h, w) = (frames[0].h(), frames[0].w());
    if frames.iter().any(|f| (f.h(), f.w()) != (h, w)) {
        bail!("frames in {} differ in size", dir.display());
    }
    Ok(frames)
}

fn parse_list(s: &str, n: usize) -> anyhow::Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad number list '{s}'"))?;
    if v.len() != n {
        bail!("expected {n} comma-separated values in '{s}'");
    }
    Ok(v)
}

fn rect_of(v: &[f64]) -> anyhow::Result<RegionShape> {
    if v[..4].iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
        bail!("rectangle corners and sizes must be non-negative integers");
    }
    Ok(RegionShape::Rect {
        x: v[0] as usize,
        y: v[1] as usize,
        w: v[2] as usize,
        h: v[3] as usize,
    })
}

/// A map plus the region it highlights, if any.
fn parse_qmap(spec: &str, h: usize, w: usize) -> anyhow::Result<(QualityMap, Option<RegionShape>)> {
    if let Some(v) = spec.strip_prefix("uniform:") {
        let level: f64 = v.parse().with_context(|| format!("bad level '{v}'"))?;
        return Ok((uniform_map(h, w, level)?, None));
    }
    if let Some(v) = spec.strip_prefix("rect:") {
        let v = parse_list(v, 6)?;
        let shape = rect_of(&v)?;
        return Ok((
            compose_region_map(h, w, v[5], &[(shape, v[4])])?,
            Some(shape),
        ));
    }
    let m =
        qmap::io::load(Path::new(spec)).with_context(|| format!("loading quality map {spec}"))?;
    if (m.height(), m.width()) != (h, w) {
        bail!(
            "quality map is {}x{}, frames are {h}x{w}",
            m.height(),
            m.width()
        );
    }
    Ok((m, None))
}

fn create_out(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .exit_with(EXIT_CONFIG)
}

fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .and_then(|s| Ok(TrainConfig::from_toml_str(&s)?))
            .exit_with(EXIT_CONFIG)?,
        None => TrainConfig::desk_default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().exit_with(EXIT_CONFIG)?;
    create_out(&a.out)?;
    let mut trainer = Trainer::new(cfg).exit_with(EXIT_CONFIG)?;
    let log_path = a.out.join("train_log.csv");
    let mut log = csv::Writer::from_path(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))
        .exit_with(EXIT_CONFIG)?;
    let saved = trainer
        .run(&a.out, Some(&mut log), |r| {
            if r.step % 100 == 0 {
                eprintln!(
                    "step {} stage {} bpp {:.4} wmse {:.4}",
                    r.step, r.stage, r.loss.rate, r.loss.wmse
                );
            }
        })
        .context("training aborted")
        .exit_with(EXIT_TRAINING)?;
    for p in saved {
        println!("{}", p.display());
    }
    Ok(())
}

fn encode(a: EncodeArgs) -> CmdResult {
    let codec = load_codec(&a.checkpoint, EXIT_CONFIG)?;
    let frames = load_frames(&a.frames).exit_with(EXIT_CONFIG)?;
    let (m, _) = parse_qmap(&a.qmap, frames[0].h(), frames[0].w()).exit_with(EXIT_CONFIG)?;
    let opts = StreamOptions {
        signal_qmap: !a.no_signal,
        ..Default::default()
    };
    let enc =
        encode_sequence(&codec, &frames, &vec![m; frames.len()], opts).exit_with(EXIT_CONFIG)?;
    fs::write(&a.out, &enc.bytes)
        .with_context(|| format!("writing {}", a.out.display()))
        .exit_with(EXIT_CONFIG)?;
    let pixels = (frames.len() * frames[0].h() * frames[0].w()) as f64;
    println!(
        "{} frames, {} bytes, {:.4} bpp",
        frames.len(),
        enc.bytes.len(),
        8.0 * enc.bytes.len() as f64 / pixels
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> CmdResult {
    let codec = load_codec(&a.checkpoint, EXIT_STREAM)?;
    let bytes = fs::read(&a.bitstream)
        .with_context(|| format!("reading {}", a.bitstream.display()))
        .exit_with(EXIT_CONFIG)?;
    let header = lrc_core::entropy::Bitstream::from_bytes(&bytes)
        .map(|b| b.header)
        .context("invalid bitstream")
        .exit_with(EXIT_STREAM)?;
    let maps = match &a.qmap {
        Some(spec) => {
            let (m, _) = parse_qmap(spec, header.height as usize, header.width as usize)
                .exit_with(EXIT_CONFIG)?;
            Some(vec![m; header.frames as usize])
        }
        None => None,
    };
    let dec = decode_sequence(&codec, &bytes, maps.as_deref(), CoderBackend::default())
        .context("invalid bitstream")
        .exit_with(EXIT_STREAM)?;
    create_out(&a.out)?;
    for (t, f) in dec.frames.iter().enumerate() {
        data::save_frame(f, &a.out.join(format!("frame_{t:04}.png"))).exit_with(EXIT_CONFIG)?;
    }
    println!(
        "{} frames of {}x{}",
        dec.frames.len(),
        header.width,
        header.height
    );
    Ok(())
}

fn evaluate(a: EvalArgs) -> CmdResult {
    let frames = load_frames(&a.frames).exit_with(EXIT_CONFIG)?;
    let (h, w) = (frames[0].h(), frames[0].w());
    let (m, rect) = parse_qmap(&a.qmap, h, w).exit_with(EXIT_CONFIG)?;
    let region = match &a.region {
        Some(s) => Some(
            parse_list(s, 4)
                .and_then(|v| rect_of(&v))
                .exit_with(EXIT_CONFIG)?,
        ),
        None => rect,
    };
    let mask = region.map(|r| r.mask(h, w));
    create_out(&a.out)?;
    let rows = if let Some(dir) = &a.recon {
        let recon = load_frames(dir).exit_with(EXIT_CONFIG)?;
        if recon.len() != frames.len() {
            return Err(anyhow!(
                "{} frames but {} reconstructions",
                frames.len(),
                recon.len()
            ))
            .exit_with(EXIT_CONFIG);
        }
        frames
            .iter()
            .zip(&recon)
            .enumerate()
            .map(|(t, (x, y))| {
                let region_psnr = |inside: bool| -> lrc_core::Result<Option<f64>> {
                    let Some(mask) = &mask else { return Ok(None) };
                    let sel: Vec<bool> = mask.iter().map(|&b| b == inside).collect();
                    if sel.iter().any(|&b| b) {
                        eval::psnr(x, y, Some(&sel)).map(Some)
                    } else {
                        Ok(None)
                    }
                };
                Ok(eval::FrameMetrics {
                    clip: 0,
                    frame: t,
                    setting: "recon".into(),
                    bpp_total: 0.0,
                    bpp_latent: 0.0,
                    bpp_qmap: 0.0,
                    psnr: eval::psnr(x, y, None)?,
                    psnr_in_region: region_psnr(true)?,
                    psnr_out_region: region_psnr(false)?,
                })
            })
            .collect::<lrc_core::Result<Vec<_>>>()
            .exit_with(EXIT_CONFIG)?
    } else {
        let Some(ck) = &a.checkpoint else {
            return Err(anyhow!("eval needs --checkpoint or --recon")).exit_with(EXIT_CONFIG);
        };
        let codec = load_codec(ck, EXIT_CONFIG)?;
        let maps = vec![m; frames.len()];
        let (rows, enc) = eval::evaluate_clip(
            &codec,
            0,
            &a.qmap,
            &frames,
            &maps,
            mask.as_deref(),
            StreamOptions::default(),
        )
        .exit_with(EXIT_CONFIG)?;
        for (t, f) in enc.frames.iter().enumerate() {
            let hm = eval::bit_heatmap(codec.config(), &f.encoding).exit_with(EXIT_CONFIG)?;
            plot::save_heatmap(&hm, &a.out.join(format!("heatmap_{t:04}.png")))
                .exit_with(EXIT_CONFIG)?;
            qmap::io::save(&f.qmap, &a.out.join(format!("qmap_{t:04}.png")))
                .exit_with(EXIT_CONFIG)?;
            data::save_frame(&f.encoding.recon, &a.out.join(format!("recon_{t:04}.png")))
                .exit_with(EXIT_CONFIG)?;
        }
        rows
    };
    write_rows(&rows, &a.out.join("metrics.csv"))?;
    let s = Summary::of(&rows[0].setting, &rows).exit_with(EXIT_CONFIG)?;
    println!(
        "{} frames: {:.4} bpp, {:.2} dB",
        s.frames, s.bpp_total, s.psnr
    );
    Ok(())
}

fn write_rows<T: serde::Serialize>(rows: &[T], path: &Path) -> CmdResult {
    let f = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .exit_with(EXIT_CONFIG)?;
    eval::write_csv(rows, f).exit_with(EXIT_CONFIG)
}

fn clip_dirs(roots: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for r in roots {
        let has_frames = fs::read_dir(r)
            .with_context(|| format!("reading {}", r.display()))?
            .filter_map(|e| e.ok())
            .any(|e| {
                e.path()
                    .extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("png"))
            });
        if has_frames {
            out.push(r.clone());
        } else {
            out.extend(
                data::list_clip_dirs(r).with_context(|| format!("reading {}", r.display()))?,
            );
        }
    }
    Ok(out)
}

fn sweep(a: SweepArgs) -> CmdResult {
    let codec = load_codec(&a.checkpoint, EXIT_CONFIG)?;
    let clips = clip_dirs(&a.frames)
        .and_then(|d| {
            d.iter()
                .map(|p| load_frames(p))
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .exit_with(EXIT_CONFIG)?;
    let levels = a.levels.unwrap_or_else(qmap::sweep_levels);
    create_out(&a.out)?;
    let ck_size = fs::metadata(&a.checkpoint).map(|m| m.len()).ok();
    let res = eval::sweep_uniform(&codec, &clips, &levels, StreamOptions::default())
        .exit_with(EXIT_CONFIG)?;
    write_rows(&res.points, &a.out.join("sweep.csv"))?;
    write_rows(&res.rows, &a.out.join("frames.csv"))?;
    match res.curve("uniform") {
        Ok(c) => plot::save_rd_plot(&[c], &a.out.join("rd.png")).exit_with(EXIT_CONFIG)?,
        Err(e) => eprintln!("warning: no RD plot: {e}"),
    }
    if fs::metadata(&a.checkpoint).map(|m| m.len()).ok() != ck_size {
        return Err(anyhow!("checkpoint changed during the sweep")).exit_with(EXIT_CONFIG);
    }
    for p in &res.points {
        println!(
            "{}: {:.4} bpp ({:.4} latent), {:.2} dB",
            p.setting, p.bpp_total, p.bpp_latent, p.psnr
        );
    }
    Ok(())
}

fn genmap(a: GenmapArgs) -> CmdResult {
    create_out(&a.out)?;
    let maps: Vec<QualityMap> = match &a.qmap {
        Some(spec) => vec![
            parse_qmap(spec, a.height, a.width)
                .exit_with(EXIT_CONFIG)?
                .0,
        ],
        None => {
            let mut cfg = match &a.config {
                Some(p) => fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .and_then(|s| toml::from_str::<MapGenConfig>(&s).context("parsing map config"))
                    .exit_with(EXIT_CONFIG)?,
                None => MapGenConfig::default(),
            };
            if let Some(mix) = &a.mix {
                if mix.len() != 3 {
                    return Err(anyhow!("--mix takes three weights, got {}", mix.len()))
                        .exit_with(EXIT_CONFIG);
                }
                let sum: f64 = mix.iter().sum();
                cfg.mix = [mix[0] / sum, mix[1] / sum, mix[2] / sum];
            }
            if let Some(d) = a.delta {
                cfg.delta = d;
            }
            cfg.validate().exit_with(EXIT_CONFIG)?;
            generate_sequence(a.height, a.width, &cfg, a.seed, a.frames)
                .exit_with(EXIT_CONFIG)?
                .into_iter()
                .map(|g| g.map)
                .collect()
        }
    };
    for (t, m) in maps.iter().enumerate() {
        qmap::io::save(m, &a.out.join(format!("qmap_{t:04}.png"))).exit_with(EXIT_CONFIG)?;
        qmap::io::save(m, &a.out.join(format!("qmap_{t:04}.qmap"))).exit_with(EXIT_CONFIG)?;
    }
    println!("{} maps written to {}", maps.len(), a.out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct OptimizeRow {
    lambda: f64,
    init_level: f64,
    init_objective: f64,
    objective: f64,
    best_step: usize,
}

fn optimize(a: OptimizeArgs) -> CmdResult {
    let codec = load_codec(&a.checkpoint, EXIT_CONFIG)?;
    let frames = load_frames(&a.frames).exit_with(EXIT_CONFIG)?;
    if let Some(l) = a.lambda.iter().find(|l| !(**l > 0.0)) {
        return Err(anyhow!("λ target {l} must be positive")).exit_with(EXIT_CONFIG);
    }
    create_out(&a.out)?;
    let mut rows = Vec::new();
    for &lambda in &a.lambda {
        let opts = OptimizeOptions {
            steps: a.steps,
            seed: a.seed,
            ..Default::default()
        };
        let res = eval::optimize_qmap(&codec, &frames, lambda, opts).exit_with(EXIT_TRAINING)?;
        let dir = a.out.join(format!("lambda_{lambda}"));
        create_out(&dir)?;
        for (t, m) in res.maps.iter().enumerate() {
            qmap::io::save(m, &dir.join(format!("qmap_{t:04}.png"))).exit_with(EXIT_CONFIG)?;
            qmap::io::save(m, &dir.join(format!("qmap_{t:04}.qmap"))).exit_with(EXIT_CONFIG)?;
        }
        println!(
            "λ {lambda}: objective {:.5} (uniform {} gives {:.5})",
            res.objective, res.init_level, res.init_objective
        );
        rows.push(OptimizeRow {
            lambda,
            init_level: res.init_level,
            init_objective: res.init_objective,
            objective: res.objective,
            best_step: res.best_step,
        });
    }
    write_rows(&rows, &a.out.join("optimize.csv"))
}
