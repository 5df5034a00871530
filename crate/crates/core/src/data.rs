//! Frame ingestion and the synthetic moving-shapes dataset.

use std::fs;
use std::path::{Path, PathBuf};

use bgop_tensor::Tensor;
use image::{ImageBuffer, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame sides are cropped to multiples of this.
pub const CROP_MULTIPLE: usize = 64;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

/// Frames of one sequence as `1×3×H×W` tensors on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub frames: Vec<Tensor<f32>>,
}

impl FrameSequence {
    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| (f.shape()[2], f.shape()[3]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub root: PathBuf,
    pub sequences: Vec<FrameSequence>,
}

impl FrameDataset {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }
}

/// Largest multiples of 64 not exceeding `(height, width)`.
pub fn aligned_dims(height: usize, width: usize) -> (usize, usize) {
    (height / CROP_MULTIPLE * CROP_MULTIPLE, width / CROP_MULTIPLE * CROP_MULTIPLE)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Converts an RGB image to a tensor, center-cropped to `height × width`.
pub fn image_to_tensor(img: &RgbImage, height: usize, width: usize) -> Tensor<f32> {
    let (x0, y0) = ((img.width() as usize - width) / 2, (img.height() as usize - height) / 2);
    Tensor::from_fn(&[1, 3, height, width], |i| {
        let (c, y, x) = (i / (height * width), (i / width) % height, i % width);
        img.get_pixel((x0 + x) as u32, (y0 + y) as u32)[c] as f32 / 255.0
    })
}

/// Converts a `1×3×H×W` tensor to an 8-bit image, clamping to `[0, 1]`.
pub fn tensor_to_image(frame: &Tensor<f32>) -> Result<RgbImage> {
    let (_, c, h, w) = frame.dims4()?;
    if c != 3 {
        return Err(Error::config(format!("expected 3 channels, got {c}")));
    }
    let d = frame.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| {
            let v = d[(ch * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    }))
}

pub fn save_frame(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    tensor_to_image(frame)?.save(path).map_err(|e| Error::data(path, e.to_string()))
}

fn load_sequence(name: String, files: Vec<PathBuf>) -> Result<FrameSequence> {
    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for f in &files {
        let img = image::open(f).map_err(|e| Error::data(f, e.to_string()))?.to_rgb8();
        let raw = (img.height() as usize, img.width() as usize);
        match dims {
            None => dims = Some(raw),
            Some(d) if d != raw => {
                return Err(Error::data(f, format!("{}x{} differs from {}x{} earlier in the sequence", raw.1, raw.0, d.1, d.0)))
            }
            _ => {}
        }
        let (h, w) = aligned_dims(raw.0, raw.1);
        if h == 0 || w == 0 {
            return Err(Error::data(f, format!("{}x{} is smaller than {CROP_MULTIPLE}x{CROP_MULTIPLE}", raw.1, raw.0)));
        }
        frames.push(image_to_tensor(&img, h, w));
    }
    Ok(FrameSequence { name, files, frames })
}

/// Loads a directory of frames, or a directory of sequence directories.
/// Files are ordered by name and center-cropped to multiples of 64.
pub fn load_frames(dir: &Path) -> Result<FrameDataset> {
    let entries = sorted_entries(dir)?;
    let files: Vec<PathBuf> = entries.iter().filter(|p| p.is_file() && is_image(p)).cloned().collect();
    let mut sequences = Vec::new();
    if !files.is_empty() {
        let name = dir.file_name().map_or_else(|| "frames".into(), |n| n.to_string_lossy().into_owned());
        sequences.push(load_sequence(name, files)?);
    }
    for sub in entries.iter().filter(|p| p.is_dir()) {
        let files: Vec<PathBuf> = sorted_entries(sub)?.into_iter().filter(|p| p.is_file() && is_image(p)).collect();
        if !files.is_empty() {
            sequences.push(load_sequence(sub.file_name().unwrap_or_default().to_string_lossy().into_owned(), files)?);
        }
    }
    if sequences.is_empty() {
        return Err(Error::data(dir, "no image frames found"));
    }
    Ok(FrameDataset { root: dir.to_path_buf(), sequences })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Disc,
}

/// A shape translating at constant velocity, in pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    /// Center at frame 0.
    pub origin: [f32; 2],
    /// Half extents; a disc uses the first as its radius.
    pub size: [f32; 2],
    pub velocity: [f32; 2],
}

impl ShapeTrack {
    pub fn center(&self, t: usize) -> [f32; 2] {
        [self.origin[0] + self.velocity[0] * t as f32, self.origin[1] + self.velocity[1] * t as f32]
    }

    fn covers(&self, t: usize, x: f32, y: f32) -> bool {
        let [cx, cy] = self.center(t);
        let (dx, dy) = (x - cx, y - cy);
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= self.size[0] && dy.abs() <= self.size[1],
            ShapeKind::Disc => dx * dx + dy * dy <= self.size[0] * self.size[0],
        }
    }
}

/// Ground truth of one synthetic sequence, stored as `motion.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMotion {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Pan of the background texture, pixels per frame.
    pub background_velocity: [f32; 2],
    pub background_frequency: [f32; 2],
    /// Shapes in painting order.
    pub shapes: Vec<ShapeTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Zero every velocity.
    pub still: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, sequences: 8, frames: 17, width: 128, height: 128, still: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub motion: SequenceMotion,
    pub frames: Vec<Tensor<f32>>,
}

fn velocity(rng: &mut ChaCha8Rng, still: bool) -> [f32; 2] {
    if still {
        return [0.0, 0.0];
    }
    // half-pixel steps, so some tracks move by whole pixels and some do not
    [rng.gen_range(-6..=6) as f32 / 2.0, rng.gen_range(-6..=6) as f32 / 2.0]
}

fn render(m: &SequenceMotion, t: usize) -> Tensor<f32> {
    let (h, w) = (m.height, m.width);
    let mut out = Tensor::zeros(&[1, 3, h, w]);
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let (bx, by) = (px - m.background_velocity[0] * t as f32, py - m.background_velocity[1] * t as f32);
            let base = 0.5 + 0.2 * (bx * m.background_frequency[0]).sin() * (by * m.background_frequency[1]).cos();
            let mut rgb = [base, 0.8 * base + 0.1, 1.0 - base];
            for s in &m.shapes {
                if s.covers(t, px, py) {
                    rgb = s.color;
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                // stored as 8-bit, so keep the in-memory copy on the same grid
                d[(c * h + y) * w + x] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    out
}

/// Deterministic moving-shapes sequences over a panning texture.
pub fn make_synthetic(cfg: &SynthConfig) -> Result<Vec<SyntheticSequence>> {
    if cfg.width == 0 || cfg.height == 0 || cfg.width % CROP_MULTIPLE != 0 || cfg.height % CROP_MULTIPLE != 0 {
        return Err(Error::config(format!("synthetic dims {}x{} must be positive multiples of 64", cfg.width, cfg.height)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width as f32, cfg.height as f32);
    let mut out = Vec::with_capacity(cfg.sequences);
    for _ in 0..cfg.sequences {
        let shapes = (0..rng.gen_range(2..=4))
            .map(|_| ShapeTrack {
                kind: if rng.gen_bool(0.5) { ShapeKind::Rectangle } else { ShapeKind::Disc },
                color: [rng.gen(), rng.gen(), rng.gen()],
                origin: [rng.gen_range(0.0..w), rng.gen_range(0.0..h)],
                size: [rng.gen_range(4.0..w / 5.0), rng.gen_range(4.0..h / 5.0)],
                velocity: velocity(&mut rng, cfg.still),
            })
            .collect();
        let motion = SequenceMotion {
            width: cfg.width,
            height: cfg.height,
            frames: cfg.frames,
            background_velocity: velocity(&mut rng, cfg.still),
            background_frequency: [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)],
            shapes,
        };
        let frames = (0..cfg.frames).map(|t| render(&motion, t)).collect();
        out.push(SyntheticSequence { motion, frames });
    }
    Ok(out)
}

/// Writes `seq_NNN/frame_NNNN.png` plus `seq_NNN/motion.json` under `dir`.
pub fn write_synthetic(sequences: &[SyntheticSequence], dir: &Path) -> Result<()> {
    for (k, s) in sequences.iter().enumerate() {
        let sub = dir.join(format!("seq_{k:03}"));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (t, f) in s.frames.iter().enumerate() {
            save_frame(f, &sub.join(format!("frame_{t:04}.png")))?;
        }
        let path = sub.join("motion.json");
        let json = serde_json::to_string_pretty(&s.motion).map_err(|e| Error::data(&path, e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_motion(path: &Path) -> Result<SequenceMotion> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}
