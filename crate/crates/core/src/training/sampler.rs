use bgop_tensor::Tensor;
use rand::Rng;

use super::config::AugmentationSpec;
use crate::error::{Error, Result};

/// Crops a `1×C×H×W` frame at `(y, x)`.
pub fn crop(frame: &Tensor<f32>, y: usize, x: usize, size: usize) -> Result<Tensor<f32>> {
    let (_, c, h, w) = frame.dims4()?;
    if y + size > h || x + size > w {
        return Err(Error::config(format!("crop {size} at ({y}, {x}) exceeds {h}x{w}")));
    }
    let d = frame.data();
    Ok(Tensor::from_fn(&[1, c, size, size], |i| {
        let (ch, yy, xx) = (i / (size * size), (i / size) % size, i % size);
        d[(ch * h + y + yy) * w + x + xx]
    }))
}

/// Rotates a square `1×C×S×S` frame by `quarter_turns × 90°` counter-clockwise.
pub fn rotate(frame: &Tensor<f32>, quarter_turns: usize) -> Result<Tensor<f32>> {
    let (_, c, h, w) = frame.dims4()?;
    if h != w {
        return Err(Error::config("rotation needs square frames"));
    }
    let s = h;
    let d = frame.data();
    Ok(Tensor::from_fn(&[1, c, s, s], |i| {
        let (ch, y, x) = (i / (s * s), (i / s) % s, i % s);
        let (sy, sx) = match quarter_turns % 4 {
            0 => (y, x),
            1 => (x, s - 1 - y),
            2 => (s - 1 - y, s - 1 - x),
            _ => (s - 1 - x, y),
        };
        d[(ch * s + sy) * s + sx]
    }))
}

/// Draws clips of `length` consecutive frames from a set of sequences and
/// applies the same crop, rotation and flip to every frame of a clip.
pub struct ClipSampler<'a> {
    sequences: Vec<&'a [Tensor<f32>]>,
    crop: usize,
    augment: AugmentationSpec,
}

impl<'a> ClipSampler<'a> {
    pub fn new(sequences: &'a [Vec<Tensor<f32>>], length: usize, crop: usize, augment: AugmentationSpec) -> Result<Self> {
        let usable: Vec<&[Tensor<f32>]> = sequences
            .iter()
            .filter(|s| {
                s.len() >= length && s.first().is_some_and(|f| f.shape()[2] >= crop && f.shape()[3] >= crop)
            })
            .map(|s| s.as_slice())
            .collect();
        if usable.is_empty() {
            return Err(Error::Training(format!("no sequence holds {length} frames of at least {crop}x{crop}")));
        }
        Ok(Self { sequences: usable, crop, augment })
    }

    /// One clip of frames `t, t + stride, ...`, `length` frames long.
    pub fn clip(&self, rng: &mut impl Rng, length: usize, stride: usize) -> Result<Vec<Tensor<f32>>> {
        let seq = self.sequences[rng.gen_range(0..self.sequences.len())];
        let span = (length - 1) * stride + 1;
        let stride = if span > seq.len() { 1 } else { stride };
        let span = (length - 1) * stride + 1;
        if span > seq.len() {
            return Err(Error::Training(format!("sequence of {} frames is shorter than {span}", seq.len())));
        }
        let start = rng.gen_range(0..=seq.len() - span);
        let (_, _, h, w) = seq[start].dims4()?;
        let (y, x) = if self.augment.random_crop {
            (rng.gen_range(0..=h - self.crop), rng.gen_range(0..=w - self.crop))
        } else {
            ((h - self.crop) / 2, (w - self.crop) / 2)
        };
        let turns = if self.augment.random_rotation { rng.gen_range(0..4) } else { 0 };
        let mut frames = (0..length)
            .map(|i| rotate(&crop(&seq[start + i * stride], y, x, self.crop)?, turns))
            .collect::<Result<Vec<_>>>()?;
        if self.augment.temporal_flip && rng.gen_bool(0.5) {
            frames.reverse();
        }
        Ok(frames)
    }

    /// `batch` clips stacked frame by frame into `B×C×S×S` tensors.
    pub fn batch(&self, rng: &mut impl Rng, batch: usize, length: usize, stride: usize) -> Result<Vec<Tensor<f32>>> {
        let clips = (0..batch).map(|_| self.clip(rng, length, stride)).collect::<Result<Vec<_>>>()?;
        (0..length)
            .map(|t| Ok(Tensor::stack(&clips.iter().map(|c| c[t].clone()).collect::<Vec<_>>())?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(t: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[1, 3, h, w], |i| (i + 1000 * t) as f32)
    }

    #[test]
    fn rotation_examples() {
        let f = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rotate(&f, 1).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate(&f, 2).unwrap().data(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(rotate(&rotate(&f, 1).unwrap(), 3).unwrap(), f);
        assert_eq!(crop(&ramp(0, 4, 4), 1, 2, 2).unwrap().data()[..4], [6.0, 7.0, 10.0, 11.0]);
    }

    #[test]
    fn clips_share_geometry_and_flip_consistently() {
        let seqs = vec![(0..6).map(|t| ramp(t, 128, 128)).collect::<Vec<_>>()];
        let spec = AugmentationSpec { random_crop: true, random_rotation: false, temporal_flip: true };
        let s = ClipSampler::new(&seqs, 3, 64, spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut flipped = 0;
        for _ in 0..40 {
            let c = s.clip(&mut rng, 3, 1).unwrap();
            let d01 = c[1].data()[0] - c[0].data()[0];
            let d12 = c[2].data()[0] - c[1].data()[0];
            assert_eq!(d01, d12);
            assert_eq!(d01.abs(), 1000.0);
            flipped += usize::from(d01 < 0.0);
            for f in &c {
                assert_eq!(f.data()[1] - f.data()[0], 1.0);
            }
        }
        assert!(flipped > 5 && flipped < 35);
        let b = s.batch(&mut rng, 4, 3, 2).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b[0].shape(), &[4, 3, 64, 64]);
        assert!(ClipSampler::new(&seqs, 7, 64, spec).is_err());
        assert!(ClipSampler::new(&seqs, 3, 192, spec).is_err());
    }
}
