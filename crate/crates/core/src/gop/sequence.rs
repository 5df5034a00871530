use bgop_tensor::{Float, Tensor};

use super::engine::{decode_gop, encode_gop, EncodedGop};
use super::schedule::{coding_schedule, GopStructure};
use crate::error::{Error, Result};
use crate::nn::{Binding, Codec};

/// One group of a sequence: frames `start..=start + size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GopSpan {
    pub start: usize,
    pub size: usize,
}

impl GopSpan {
    pub fn structure(&self) -> Result<GopStructure> {
        match (self.start, self.size) {
            (0, 0) => Ok(GopStructure::key_only()),
            (0, n) => coding_schedule(n),
            (_, n) => GopStructure::continuation(n),
        }
    }
}

/// Splits `frame_count` frames into groups of `gop_size` that share their
/// boundary key frames. A shorter tail uses the largest power of two that
/// fits; a single frame becomes a lone key.
pub fn sequence_plan(frame_count: usize, gop_size: usize) -> Result<Vec<GopSpan>> {
    coding_schedule(gop_size)?;
    match frame_count {
        0 => Err(Error::config("empty sequence")),
        1 => Ok(vec![GopSpan { start: 0, size: 0 }]),
        _ => {
            let mut spans = Vec::new();
            let mut start = 0;
            while start + 1 < frame_count {
                let left = frame_count - 1 - start;
                let size = if left >= gop_size { gop_size } else { 1 << left.ilog2() };
                spans.push(GopSpan { start, size });
                start += size;
            }
            Ok(spans)
        }
    }
}

/// Encoded groups plus the encoder-side reconstruction of every frame.
#[derive(Debug, Clone)]
pub struct SequenceEncoding<F: Float> {
    pub gops: Vec<EncodedGop>,
    pub recon: Vec<Tensor<F>>,
    /// Estimated bits of the whole sequence, each key counted once.
    pub bits: f64,
}

pub fn encode_sequence<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    frames: &[Tensor<F>],
    gop_size: usize,
) -> Result<SequenceEncoding<F>> {
    let plan = sequence_plan(frames.len(), gop_size)?;
    let mut recon: Vec<Tensor<F>> = Vec::with_capacity(frames.len());
    let mut gops = Vec::with_capacity(plan.len());
    let mut bits = 0.0;
    for span in plan {
        let structure = span.structure()?;
        let key = recon.last().cloned();
        let slice = &frames[span.start..=span.start + span.size];
        let out = encode_gop(codec, p, slice, &structure, 0.0, key.as_ref().filter(|_| structure.shared_key))?;
        let skip = usize::from(structure.shared_key);
        recon.extend(out.recon.into_iter().skip(skip));
        bits += out.bits;
        gops.push(out.encoded);
    }
    Ok(SequenceEncoding { gops, recon, bits })
}

pub fn decode_sequence<F: Float>(codec: &Codec, p: &Binding<F>, gops: &[EncodedGop]) -> Result<Vec<Tensor<F>>> {
    let mut frames: Vec<Tensor<F>> = Vec::new();
    for gop in gops {
        let key = frames.last().cloned();
        let out = decode_gop(codec, p, gop, key.as_ref().filter(|_| gop.shared_key))?;
        let skip = usize::from(gop.shared_key);
        frames.extend(out.into_iter().skip(skip));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(frames: usize, n: usize) -> Vec<(usize, usize)> {
        sequence_plan(frames, n).unwrap().iter().map(|s| (s.start, s.size)).collect()
    }

    #[test]
    fn plans_cover_every_frame_once() {
        assert_eq!(sizes(1, 4), vec![(0, 0)]);
        assert_eq!(sizes(5, 4), vec![(0, 4)]);
        assert_eq!(sizes(9, 4), vec![(0, 4), (4, 4)]);
        assert_eq!(sizes(8, 4), vec![(0, 4), (4, 2), (6, 1)]);
        assert_eq!(sizes(2, 8), vec![(0, 1)]);
        assert!(sequence_plan(0, 4).is_err());
        assert!(sequence_plan(5, 3).is_err());
        for total in 1..40 {
            let mut coded = vec![0; total];
            for span in sequence_plan(total, 8).unwrap() {
                let s = span.structure().unwrap();
                s.validate().unwrap();
                for u in &s.units {
                    coded[span.start + u.target] += 1;
                }
            }
            assert!(coded.iter().all(|&c| c == 1), "{total}: {coded:?}");
        }
    }
}
