use bgop_tensor::{Float, Tensor, Var};

use super::backend::{table_data, RangeCoderBackend, STATUS_OK};
use super::container::{read_container, write_container, Chunk, StreamHeader};
use crate::entropy::{build_pmf_table, quantize_pmf, CdfTable, Laplace, LaplaceParams};
use crate::error::{Error, Result};
use crate::gop::{latent_shapes, sequence_plan, EncodedGop, EncodedUnit, LatentStream, StreamKind, UnitKind};
use crate::nn::{Binding, Codec, ModelConfig, ParamStore};

/// Byte offset of the model id in the header.
const MODEL_ID_OFFSET: usize = 10;

/// One-byte fingerprint of a model, stored in the header so a decoder
/// refuses streams written with different weights.
pub fn model_id<F: Float>(config: &ModelConfig, params: &ParamStore<F>) -> u8 {
    let mut h = crc32fast::Hasher::new();
    h.update(serde_json::to_string(config).unwrap_or_default().as_bytes());
    for (name, t) in params.iter() {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    h.finalize().to_be_bytes().iter().fold(0, |a, b| a ^ b)
}

fn span(symbols: &[i32]) -> (i16, i16) {
    let lo = symbols.iter().copied().min().unwrap_or(0);
    let hi = symbols.iter().copied().max().unwrap_or(0);
    (lo as i16, hi as i16)
}

fn hyper_tables(span: (i16, i16), count: usize) -> Result<Vec<u32>> {
    let pmf = build_pmf_table(Laplace::UNIT, span.0 as i32, span.1 as i32)?;
    let table = quantize_pmf(pmf.symbol_min, &pmf.probs)?;
    Ok(table_data(std::iter::repeat(&table).take(count)))
}

fn main_tables<F: Float>(params: &LaplaceParams<F>, span: (i16, i16)) -> Result<Vec<u32>> {
    let tables = (0..params.len())
        .map(|i| {
            let pmf = build_pmf_table(params.element(i), span.0 as i32, span.1 as i32)?;
            quantize_pmf(pmf.symbol_min, &pmf.probs)
        })
        .collect::<Result<Vec<CdfTable>>>()?;
    Ok(table_data(&tables))
}

fn entropy_params<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    kind: StreamKind,
    hyper: &[i32],
    shape: [usize; 4],
) -> Result<LaplaceParams<F>> {
    let z = Tensor::from_vec(&shape, hyper.iter().map(|&s| F::from_f64(s as f64)).collect())?;
    kind_codec(codec, kind).entropy_params(p, &Var::constant(z))
}

fn kind_codec(codec: &Codec, kind: StreamKind) -> &crate::nn::HyperpriorCodec {
    match kind {
        StreamKind::Intra => &codec.image,
        StreamKind::Flow => &codec.flow_codec,
        StreamKind::Residual => &codec.residual,
    }
}

fn encode_symbols(backend: &dyn RangeCoderBackend, symbols: &[i32], tables: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match backend.encode(symbols, tables, &mut out) {
        STATUS_OK => Ok(out),
        status => Err(Error::Coder { status, index: 0 }),
    }
}

fn decode_symbols(backend: &dyn RangeCoderBackend, bytes: &[u8], tables: &[u32], count: usize) -> Result<Vec<i32>> {
    let mut out = vec![0; count];
    let mut decoded = 0;
    match backend.decode(bytes, tables, count, &mut out, &mut decoded) {
        STATUS_OK => Ok(out),
        status => Err(Error::Coder { status, index: decoded }),
    }
}

fn frames_coded(gop: &EncodedGop) -> usize {
    gop.units.len()
}

/// Serializes the groups of one sequence. Frame count and group layout
/// must match [`sequence_plan`] for `gop_size`.
pub fn write_bitstream<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    gops: &[EncodedGop],
    gop_size: usize,
    backend: &dyn RangeCoderBackend,
) -> Result<Vec<u8>> {
    let frame_count: usize = gops.iter().map(frames_coded).sum();
    let (width, height) = gops.first().map_or((0, 0), |g| (g.width, g.height));
    let plan = if frame_count == 0 { Vec::new() } else { sequence_plan(frame_count, gop_size)? };
    if plan.len() != gops.len() {
        return Err(Error::config(format!("{} groups do not match the plan for {frame_count} frames", gops.len())));
    }
    for (span, gop) in plan.iter().zip(gops) {
        if span.structure()? != gop.structure()? || (gop.width, gop.height) != (width, height) {
            return Err(Error::config(format!("group at frame {} does not match the sequence plan", span.start)));
        }
    }
    let header = StreamHeader {
        width: u16::try_from(width).map_err(|_| Error::config("width exceeds 16 bits"))?,
        height: u16::try_from(height).map_err(|_| Error::config("height exceeds 16 bits"))?,
        gop_size: u8::try_from(gop_size).map_err(|_| Error::config("GOP size exceeds 8 bits"))?,
        model_id: model_id(codec.config(), p.store()),
        frame_count: u32::try_from(frame_count).map_err(|_| Error::config("too many frames"))?,
    };
    let mut chunks = Vec::new();
    for gop in gops {
        for unit in &gop.units {
            for s in &unit.streams {
                let (_, hyper_shape) = latent_shapes(kind_codec(codec, s.kind).config(), height, width);
                let (main_span, hyper_span) = (span(&s.main), span(&s.hyper));
                let hyper = encode_symbols(backend, &s.hyper, &hyper_tables(hyper_span, s.hyper.len())?)?;
                let params = entropy_params(codec, p, s.kind, &s.hyper, hyper_shape)?;
                let main = encode_symbols(backend, &s.main, &main_tables(&params, main_span)?)?;
                chunks.push(Chunk { kind: s.kind as u8, main_span, hyper_span, main, hyper });
            }
        }
    }
    write_container(&header, &chunks)
}

/// Parses a bitstream back into groups ready for [`crate::gop::decode_gop`].
/// Coder failures are reported as decode errors naming the unit within its
/// group.
pub fn read_bitstream<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    bytes: &[u8],
    backend: &dyn RangeCoderBackend,
) -> Result<(StreamHeader, Vec<EncodedGop>)> {
    let (header, chunks) = read_container(bytes)?;
    if header.model_id != model_id(codec.config(), p.store()) {
        return Err(Error::Container { offset: MODEL_ID_OFFSET, reason: "stream was written by a different model".into() });
    }
    if header.frame_count == 0 {
        return match chunks.is_empty() {
            true => Ok((header, Vec::new())),
            false => Err(Error::Decode { unit: 0, reason: "chunks in a stream without frames".into() }),
        };
    }
    let (width, height) = (header.width as usize, header.height as usize);
    let plan = sequence_plan(header.frame_count as usize, header.gop_size as usize)?;
    let mut chunks = chunks.into_iter();
    let mut gops = Vec::with_capacity(plan.len());
    for (g, span) in plan.iter().enumerate() {
        let structure = span.structure()?;
        let mut units = Vec::with_capacity(structure.units.len());
        for (i, unit) in structure.units.iter().enumerate() {
            let fail = |reason: String| Error::Decode { unit: i, reason: format!("group {g}: {reason}") };
            let kinds: &[StreamKind] = match unit.kind {
                UnitKind::Intra => &[StreamKind::Intra],
                UnitKind::Bidirectional { .. } => &[StreamKind::Flow, StreamKind::Residual],
            };
            let mut streams = Vec::with_capacity(kinds.len());
            for &kind in kinds {
                let chunk = chunks.next().ok_or_else(|| fail("stream ends early".into()))?;
                if chunk.kind != kind as u8 {
                    return Err(fail(format!("chunk kind {}, expected {kind:?}", chunk.kind)));
                }
                if chunk.main_span.0 > chunk.main_span.1 || chunk.hyper_span.0 > chunk.hyper_span.1 {
                    return Err(fail("empty symbol range".into()));
                }
                let (main_shape, hyper_shape) = latent_shapes(kind_codec(codec, kind).config(), height, width);
                let (nm, nh) = (main_shape.iter().product(), hyper_shape.iter().product());
                let coder = |what: &str, e: Error| match e {
                    Error::Coder { status, index } => fail(format!("{what} coder status {status} at symbol {index}")),
                    other => other,
                };
                let hyper = decode_symbols(backend, &chunk.hyper, &hyper_tables(chunk.hyper_span, nh)?, nh)
                    .map_err(|e| coder("hyper", e))?;
                let params = entropy_params(codec, p, kind, &hyper, hyper_shape)?;
                let main = decode_symbols(backend, &chunk.main, &main_tables(&params, chunk.main_span)?, nm)
                    .map_err(|e| coder("main", e))?;
                streams.push(LatentStream { kind, main, hyper });
            }
            units.push(EncodedUnit { target: unit.target, streams });
        }
        gops.push(EncodedGop { width, height, gop_size: span.size, shared_key: structure.shared_key, units });
    }
    if chunks.next().is_some() {
        return Err(Error::Decode { unit: 0, reason: "trailing chunks after the last group".into() });
    }
    Ok((header, gops))
}
