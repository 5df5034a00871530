use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bgop::bitstream::{read_bitstream, write_bitstream, StoredBackend};
use bgop::data::{load_frames, make_synthetic, save_frame, write_synthetic, FrameDataset, SynthConfig};
use bgop::gop::{decode_sequence, encode_sequence};
use bgop::metrics::{bpp, psnr, run_baseline, write_rd_csv, BaselineCodec, RdPoint};
use bgop::nn::{load_checkpoint, save_checkpoint, Binding, Codec, ModelConfig, ParamStore, Scale};
use bgop::training::{lambda_sweep, train, Stage, TrainConfig};
use bgop::Error;
use bgop_tensor::Tensor;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bgop", version, about = "Hierarchical bi-directional learned video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
    Tiny,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Tiny => Scale::Tiny,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage and write a checkpoint.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON training config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to start from; a fresh model otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long, default_value = "model.bgck")]
        out: PathBuf,
        /// Line-delimited JSON step log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress a directory of frames.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        gop: usize,
    },
    /// Reconstruct frames from a bitstream.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print bpp and PSNR of every sequence under a directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        gop: usize,
    },
    /// Train one model per λ and write an RD curve.
    Rd {
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
    },
    /// Encode with an external encoder for comparison.
    Baseline {
        #[arg(long)]
        codec: BaselineCodec,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        gop: usize,
        #[arg(long, default_value = "ultrafast")]
        preset: String,
        #[arg(long, value_delimiter = ',', default_value = "37,32,27,22")]
        crf: Vec<u32>,
        #[arg(long, default_value = "ffmpeg")]
        ffmpeg: String,
    },
    /// Write the synthetic moving-shapes dataset.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        sequences: usize,
        #[arg(long, default_value_t = 17)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long)]
        still: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Environment(_)) => 2,
        Some(Error::Data { .. } | Error::Io { .. } | Error::Checkpoint(_) | Error::Training(_)) => 3,
        Some(Error::Decode { .. } | Error::Container { .. } | Error::Coder { .. }) => 4,
        _ => 1,
    }
}

fn train_config(path: Option<&Path>, stage: Stage) -> anyhow::Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::desk(stage));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut cfg: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Data { path: path.into(), reason: e.to_string() })?;
    cfg.stage = stage;
    Ok(cfg)
}

fn model(path: Option<&Path>, scale: ScaleArg, seed: u64) -> anyhow::Result<(Codec, ParamStore<f32>)> {
    match path {
        Some(path) => {
            let (config, store) = load_checkpoint(path)?;
            Ok((Codec::new(config)?, store))
        }
        None => {
            let codec = Codec::new(ModelConfig::new(scale.into()))?;
            let store = codec.init_params(seed)?;
            Ok((codec, store))
        }
    }
}

fn sequences(ds: FrameDataset) -> Vec<Vec<Tensor<f32>>> {
    ds.sequences.into_iter().map(|s| s.frames).collect()
}

fn single_sequence(dir: &Path) -> anyhow::Result<Vec<Tensor<f32>>> {
    let mut ds = load_frames(dir)?;
    if ds.sequences.len() != 1 {
        return Err(Error::Data { path: dir.into(), reason: format!("{} sequences, expected one", ds.sequences.len()) }.into());
    }
    Ok(ds.sequences.remove(0).frames)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { stage, data, lambda, steps, seed, config, model: init, scale, out, log } => {
            let mut cfg = train_config(config.as_deref(), stage)?;
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let (codec, mut store) = model(init.as_deref(), scale, cfg.seed)?;
            let seqs = sequences(load_frames(&data)?);
            let mut writer = match &log {
                Some(p) => Some(BufWriter::new(fs::File::create(p).map_err(|e| Error::Io { path: p.clone(), source: e })?)),
                None => None,
            };
            let report = train(&codec, &mut store, &seqs, &cfg, writer.as_mut().map(|w| w as &mut dyn Write))?;
            if let Some(mut w) = writer {
                w.flush().context("flushing the training log")?;
            }
            save_checkpoint(&out, codec.config(), &store)?;
            println!(
                "{}",
                json!({
                    "stage": stage,
                    "steps": cfg.steps,
                    "lambda": cfg.lambda,
                    "initial_smoothed_loss": report.initial_smoothed,
                    "final_smoothed_loss": report.final_smoothed,
                    "checkpoint": out,
                })
            );
        }
        Command::Encode { model: path, input, output, gop } => {
            let (codec, store) = model(Some(&path), ScaleArg::Desk, 0)?;
            let frames = single_sequence(&input)?;
            let p = Binding::frozen(&store);
            let enc = encode_sequence(&codec, &p, &frames, gop)?;
            let bytes = write_bitstream(&codec, &p, &enc.gops, gop, &StoredBackend)?;
            fs::write(&output, &bytes).map_err(|e| Error::Io { path: output.clone(), source: e })?;
            let (_, _, h, w) = frames[0].dims4()?;
            println!(
                "{}",
                json!({
                    "frames": frames.len(),
                    "width": w,
                    "height": h,
                    "estimated_bpp": bpp(enc.bits, frames.len(), h, w)?,
                    "file_bytes": bytes.len(),
                    "psnr": psnr(&frames, &enc.recon)?,
                })
            );
        }
        Command::Decode { model: path, input, output } => {
            let (codec, store) = model(Some(&path), ScaleArg::Desk, 0)?;
            let p = Binding::frozen(&store);
            let bytes = fs::read(&input).map_err(|e| Error::Io { path: input.clone(), source: e })?;
            let (_, gops) = read_bitstream(&codec, &p, &bytes, &StoredBackend)?;
            let frames = decode_sequence(&codec, &p, &gops)?;
            fs::create_dir_all(&output).map_err(|e| Error::Io { path: output.clone(), source: e })?;
            for (i, f) in frames.iter().enumerate() {
                save_frame(f, &output.join(format!("frame_{i:04}.png")))?;
            }
            println!("{}", json!({ "frames": frames.len(), "output": output }));
        }
        Command::Eval { model: path, data, gop } => {
            let (codec, store) = model(Some(&path), ScaleArg::Desk, 0)?;
            let p = Binding::frozen(&store);
            let ds = load_frames(&data)?;
            let (mut bits, mut file_bits, mut pixels) = (0.0, 0.0, 0usize);
            let (mut originals, mut decoded) = (Vec::new(), Vec::new());
            for seq in &ds.sequences {
                let enc = encode_sequence(&codec, &p, &seq.frames, gop)?;
                let bytes = write_bitstream(&codec, &p, &enc.gops, gop, &StoredBackend)?;
                let (_, gops) = read_bitstream(&codec, &p, &bytes, &StoredBackend)?;
                let out = decode_sequence(&codec, &p, &gops)?;
                if out != enc.recon {
                    bail!(Error::Decode { unit: 0, reason: format!("decoder drifted from the encoder on {}", seq.name) });
                }
                let (h, w) = seq.dims();
                let seq_psnr = psnr(&seq.frames, &out)?;
                println!(
                    "{}",
                    json!({ "sequence": seq.name, "frames": seq.frames.len(), "bpp": bpp(enc.bits, seq.frames.len(), h, w)?, "psnr": seq_psnr })
                );
                bits += enc.bits;
                file_bits += bytes.len() as f64 * 8.0;
                pixels += seq.frames.len() * h * w;
                originals.extend(seq.frames.iter().cloned());
                decoded.extend(out);
            }
            println!(
                "{}",
                json!({
                    "sequences": ds.sequences.len(),
                    "frames": originals.len(),
                    "bpp": bits / pixels as f64,
                    "file_bpp": file_bits / pixels as f64,
                    "psnr": psnr(&originals, &decoded)?,
                })
            );
        }
        Command::Rd { lambdas, data, out, model: init, config, steps, scale } => {
            let mut cfg = train_config(config.as_deref(), Stage::EndToEnd)?;
            cfg.steps = steps.unwrap_or(cfg.steps);
            let (codec, store) = model(init.as_deref(), scale, cfg.seed)?;
            let seqs = sequences(load_frames(&data)?);
            let sweep = lambda_sweep(&codec, &store, &lambdas, &cfg, &seqs, &seqs)?;
            let points: Vec<RdPoint> = sweep.iter().map(|e| e.point).collect();
            write_rd_csv(&points, &out)?;
            for p in &points {
                println!("{}", json!(p));
            }
        }
        Command::Baseline { codec, data, gop, preset, crf, ffmpeg } => {
            let frames = single_sequence(&data)?;
            for r in run_baseline(&ffmpeg, &frames, codec, &preset, gop, &crf)? {
                println!("{}", json!(r));
            }
        }
        Command::Synth { seed, out, sequences, frames, width, height, still } => {
            let cfg = SynthConfig { seed, sequences, frames, width, height, still };
            write_synthetic(&make_synthetic(&cfg)?, &out)?;
            println!("{}", json!({ "sequences": sequences, "frames": frames, "out": out }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
