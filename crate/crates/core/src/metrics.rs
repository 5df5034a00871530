//! PSNR, bits per pixel, RD curves and the external codec baseline.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;
use std::process::Command;

use bgop_tensor::{Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{load_frames, save_frame};
use crate::error::{Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

/// PSNR of `1 / mse` on `[0, 1]` intensities, capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Mean squared error over all frames, channels and pixels.
pub fn mse<F: Float>(a: &[Tensor<F>], b: &[Tensor<F>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(Error::config("psnr inputs differ in shape"));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            let d = u.as_f64() - v.as_f64();
            sum += d * d;
        }
        n += x.len();
    }
    if n == 0 {
        return Err(Error::config("psnr of empty inputs"));
    }
    Ok(sum / n as f64)
}

pub fn psnr<F: Float>(a: &[Tensor<F>], b: &[Tensor<F>]) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn bpp(total_bits: f64, frames: usize, height: usize, width: usize) -> Result<f64> {
    let pixels = frames * height * width;
    if pixels == 0 {
        return Err(Error::config("bits per pixel of zero pixels"));
    }
    Ok(total_bits / pixels as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub bpp: f64,
    pub frame_psnr: Vec<f64>,
}

impl Metrics {
    pub fn measure<F: Float>(original: &[Tensor<F>], decoded: &[Tensor<F>], total_bits: f64) -> Result<Self> {
        let (_, _, h, w) = original.first().ok_or_else(|| Error::config("no frames"))?.dims4()?;
        let frame_psnr = original
            .iter()
            .zip(decoded)
            .map(|(a, b)| psnr(std::slice::from_ref(a), std::slice::from_ref(b)))
            .collect::<Result<_>>()?;
        Ok(Self { psnr: psnr(original, decoded)?, bpp: bpp(total_bits, original.len(), h, w)?, frame_psnr })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
}

/// CSV with header `lambda,bpp,psnr`, rows sorted by bpp.
pub fn rd_csv(points: &[RdPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::config("RD curve needs at least one point"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &sorted {
        w.serialize(p).map_err(|e| Error::config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_rd_csv(points: &[RdPoint], path: &Path) -> Result<()> {
    fs::write(path, rd_csv(points)?).map_err(|e| Error::io(path, e))
}

pub fn parse_rd_csv(text: &str) -> Result<Vec<RdPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<RdPoint>, _>>()
        .map_err(|e| Error::config(format!("bad RD csv: {e}")))
}

pub fn read_rd_csv(path: &Path) -> Result<Vec<RdPoint>> {
    parse_rd_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineCodec {
    X264,
    X265,
}

impl BaselineCodec {
    fn encoder(&self) -> &'static str {
        match self {
            BaselineCodec::X264 => "libx264",
            BaselineCodec::X265 => "libx265",
        }
    }
}

impl std::str::FromStr for BaselineCodec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x264" => Ok(Self::X264),
            "x265" => Ok(Self::X265),
            other => Err(Error::config(format!("unknown baseline codec {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub codec: BaselineCodec,
    pub preset: String,
    pub gop: usize,
    pub crf: u32,
    pub bpp: f64,
    pub psnr: f64,
}

/// Arguments of the encoding run: closed GOPs of `gop` frames, no scene
/// cut keyframes, and a fixed quality setting.
pub fn baseline_args(codec: BaselineCodec, preset: &str, gop: usize, crf: u32, input: &str, output: &str) -> Vec<String> {
    let gop = gop.to_string();
    let mut args: Vec<String> = ["-y", "-loglevel", "error", "-framerate", "25", "-i", input, "-c:v", codec.encoder()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["-preset", preset, "-g", &gop, "-keyint_min", &gop, "-crf", &crf.to_string(), "-pix_fmt", "yuv420p"].map(String::from));
    match codec {
        BaselineCodec::X264 => args.extend(["-sc_threshold", "0", "-flags", "+cgop"].map(String::from)),
        BaselineCodec::X265 => args.extend(["-x265-params", &format!("keyint={gop}:min-keyint={gop}:scenecut=0:no-open-gop=1")].map(String::from)),
    }
    args.push(output.to_string());
    args
}

fn run(binary: &str, args: &[String]) -> Result<()> {
    let out = Command::new(binary).args(args).output().map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::Environment(format!("baseline codec unavailable: {binary} not found")),
        _ => Error::Environment(format!("baseline codec unavailable: {e}")),
    })?;
    if !out.status.success() {
        return Err(Error::Environment(format!(
            "{binary} failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// Encodes `frames` with an external encoder at each quality level and
/// measures file bits and decoded PSNR.
pub fn run_baseline(
    binary: &str,
    frames: &[Tensor<f32>],
    codec: BaselineCodec,
    preset: &str,
    gop: usize,
    crfs: &[u32],
) -> Result<Vec<BaselineResult>> {
    let (_, _, h, w) = frames.first().ok_or_else(|| Error::config("no frames"))?.dims4()?;
    let tmp = tempfile::tempdir().map_err(|e| Error::Environment(e.to_string()))?;
    let src = tmp.path().join("src");
    fs::create_dir_all(&src).map_err(|e| Error::io(&src, e))?;
    for (i, f) in frames.iter().enumerate() {
        save_frame(f, &src.join(format!("{i:05}.png")))?;
    }
    let input = src.join("%05d.png").to_string_lossy().into_owned();
    let mut results = Vec::with_capacity(crfs.len());
    for &crf in crfs {
        let video = tmp.path().join(format!("q{crf}.mkv"));
        run(binary, &baseline_args(codec, preset, gop, crf, &input, &video.to_string_lossy()))?;
        let bits = fs::metadata(&video).map_err(|e| Error::io(&video, e))?.len() as f64 * 8.0;
        let dec = tmp.path().join(format!("dec{crf}"));
        fs::create_dir_all(&dec).map_err(|e| Error::io(&dec, e))?;
        let pattern = dec.join("%05d.png").to_string_lossy().into_owned();
        let args: Vec<String> = ["-y", "-loglevel", "error", "-i", &video.to_string_lossy(), &pattern].map(String::from).to_vec();
        run(binary, &args)?;
        let decoded: Vec<_> = load_frames(&dec)?.sequences.remove(0).frames;
        if decoded.len() != frames.len() {
            return Err(Error::Environment(format!("{binary} returned {} of {} frames", decoded.len(), frames.len())));
        }
        results.push(BaselineResult {
            codec,
            preset: preset.to_string(),
            gop,
            crf,
            bpp: bpp(bits, frames.len(), h, w)?,
            psnr: psnr(frames, &decoded)?,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let a = vec![Tensor::<f64>::full(&[1, 3, 2, 2], 0.5)];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr_from_mse(1.0 / (255.0 * 255.0)) - 48.130803608679).abs() < 1e-9);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let b = vec![Tensor::<f64>::full(&[1, 3, 2, 2], 0.6)];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &[Tensor::zeros(&[1, 3, 2, 1])]).is_err());
    }

    #[test]
    fn bpp_examples() {
        assert_eq!(bpp(64000.0, 5, 320, 640).unwrap(), 0.0625);
        assert_eq!(bpp(128000.0, 5, 320, 640).unwrap(), 0.125);
        assert!(bpp(1.0, 0, 64, 64).is_err());
    }

    #[test]
    fn rd_csv_layout() {
        let one = rd_csv(&[RdPoint { lambda: 32.0, bpp: 0.1, psnr: 30.0 }]).unwrap();
        assert_eq!(one, "lambda,bpp,psnr\n32.0,0.1,30.0\n");
        let pts = [
            RdPoint { lambda: 2048.0, bpp: 0.4, psnr: 35.0 },
            RdPoint { lambda: 32.0, bpp: 0.1, psnr: 30.0 },
        ];
        let parsed = parse_rd_csv(&rd_csv(&pts).unwrap()).unwrap();
        assert_eq!(parsed, vec![pts[1], pts[0]]);
        assert!(rd_csv(&[]).is_err());
    }

    #[test]
    fn gop_reaches_the_command_line() {
        let args = baseline_args(BaselineCodec::X264, "ultrafast", 4, 23, "in/%05d.png", "out.mkv");
        let g = args.iter().position(|a| a == "-g").unwrap();
        assert_eq!(args[g + 1], "4");
        assert!(args.contains(&"ultrafast".to_string()));
        let args = baseline_args(BaselineCodec::X265, "ultrafast", 4, 28, "in", "out");
        assert!(args.iter().any(|a| a.contains("keyint=4")));
        assert!("x266".parse::<BaselineCodec>().is_err());
    }

    #[test]
    fn missing_binary_is_an_environment_error() {
        let frames = vec![Tensor::<f32>::zeros(&[1, 3, 64, 64])];
        let err = run_baseline("/nonexistent/ffmpeg", &frames, BaselineCodec::X264, "ultrafast", 4, &[23]).unwrap_err();
        assert!(matches!(&err, Error::Environment(m) if m.contains("baseline codec unavailable")), "{err}");
    }

    proptest! {
        #[test]
        fn rd_csv_round_trips(pts in prop::collection::vec((1.0f64..4096.0, 0.0f64..4.0, 10.0f64..60.0), 1..10)) {
            let pts: Vec<_> = pts.into_iter().map(|(lambda, bpp, psnr)| RdPoint { lambda, bpp, psnr }).collect();
            let parsed = parse_rd_csv(&rd_csv(&pts).unwrap()).unwrap();
            prop_assert!(parsed.windows(2).all(|w| w[0].bpp <= w[1].bpp));
            let mut sorted = pts.clone();
            sorted.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
            prop_assert_eq!(parsed, sorted);
        }

        #[test]
        fn psnr_is_order_independent(v in prop::collection::vec(0.0f64..1.0, 24)) {
            let a: Vec<_> = v.chunks(12).map(|c| Tensor::from_vec(&[1, 3, 2, 2], c.to_vec()).unwrap()).collect();
            let b: Vec<_> = a.iter().map(|t| t.map(|x| x * 0.9)).collect();
            let (ra, rb): (Vec<_>, Vec<_>) = (a.iter().rev().cloned().collect(), b.iter().rev().cloned().collect());
            prop_assert!((psnr(&a, &b).unwrap() - psnr(&ra, &rb).unwrap()).abs() < 1e-9);
        }
    }
}
