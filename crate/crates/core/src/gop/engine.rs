use bgop_tensor::{Float, Tensor, TensorError, Var};

use super::loss::{rd_loss, LossBreakdown};
use super::schedule::{coding_schedule, GopStructure, UnitKind};
use crate::entropy::Quantizer;
use crate::error::{Error, Result};
use crate::motion::{estimate_bidirectional_flow, motion_compensate, FlowPair};
use crate::nn::{AutoencoderConfig, Binding, Codec, HyperpriorCodec};

/// Which autoencoder produced a latent stream. The discriminant is the
/// container's chunk kind byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Intra = 0,
    Flow = 1,
    Residual = 2,
}

impl StreamKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(StreamKind::Intra),
            1 => Some(StreamKind::Flow),
            2 => Some(StreamKind::Residual),
            _ => None,
        }
    }

    fn codec<'a>(&self, codec: &'a Codec) -> &'a HyperpriorCodec {
        match self {
            StreamKind::Intra => &codec.image,
            StreamKind::Flow => &codec.flow_codec,
            StreamKind::Residual => &codec.residual,
        }
    }
}

/// Latent shapes `(main, hyper)` of one stream for a `height × width` frame.
pub fn latent_shapes(config: &AutoencoderConfig, height: usize, width: usize) -> ([usize; 4], [usize; 4]) {
    let d = 1 << config.down_layers;
    let hd = d << config.hyper_down_layers;
    (
        [1, config.latent_channels, height / d, width / d],
        [1, config.hyper_channels, height / hd, width / hd],
    )
}

/// Quantized latents of one stream, graph-attached.
#[derive(Debug, Clone)]
pub struct CodedStream<F: Float> {
    pub kind: StreamKind,
    pub y_hat: Var<F>,
    pub z_hat: Var<F>,
    /// Main plus hyper bits.
    pub bits: Var<F>,
}

/// Result of running the coding loop over one group.
#[derive(Debug, Clone)]
pub struct GopForward<F: Float> {
    pub structure: GopStructure,
    /// Post-processed reconstructions, frames `0..=N`.
    pub recon: Vec<Var<F>>,
    /// Streams of each unit in schedule order.
    pub streams: Vec<Vec<CodedStream<F>>>,
    pub bits_image: Var<F>,
    pub bits_flow: Var<F>,
    pub bits_residual: Var<F>,
    /// Pixels of the coded frames, batch included.
    pub pixels: usize,
}

impl<F: Float> GopForward<F> {
    /// Differentiable loss and its breakdown. Distortion averages over the
    /// coded frames; rates are divided by their pixel count.
    pub fn loss(&self, frames: &[Var<F>], lambda: f64) -> Result<(Var<F>, LossBreakdown)> {
        let mut sum: Option<Var<F>> = None;
        for u in &self.structure.units {
            let e = self.recon[u.target].mse(&frames[u.target])?;
            sum = Some(match sum {
                Some(s) => s.add(&e)?,
                None => e,
            });
        }
        let count = self.structure.units.len() as f64;
        let distortion = sum.ok_or_else(|| Error::config("empty schedule"))?.scale(F::from_f64(1.0 / count));
        let per_pixel = F::from_f64(1.0 / self.pixels as f64);
        let rate = self.bits_image.add(&self.bits_flow)?.add(&self.bits_residual)?.scale(per_pixel);
        let loss = distortion.scale(F::from_f64(lambda)).add(&rate)?;
        let px = self.pixels as f64;
        let breakdown = rd_loss(
            distortion.item().as_f64(),
            self.bits_image.item().as_f64() / px,
            self.bits_flow.item().as_f64() / px,
            self.bits_residual.item().as_f64() / px,
            lambda,
        )?;
        Ok((loss, breakdown))
    }

    pub fn total_bits(&self) -> f64 {
        [&self.bits_image, &self.bits_flow, &self.bits_residual].iter().map(|v| v.item().as_f64()).sum()
    }
}

fn zero<F: Float>() -> Var<F> {
    Var::constant(Tensor::scalar(F::zero()))
}

fn check_frames<F: Float>(codec: &Codec, frames: &[Var<F>], structure: &GopStructure) -> Result<()> {
    if frames.len() != structure.frame_count() {
        return Err(Error::config(format!(
            "GOP of size {} needs {} frames, got {}",
            structure.gop_size,
            structure.frame_count(),
            frames.len()
        )));
    }
    let shape = frames[0].shape();
    let (_, c, h, w) = frames[0].dims4()?;
    let align = codec.config().alignment();
    if c != 3 || h % align != 0 || w % align != 0 {
        return Err(TensorError::Shape(format!("frames {shape:?} need 3 channels and sides divisible by {align}")).into());
    }
    if frames.iter().any(|f| f.shape() != shape) {
        return Err(TensorError::Shape("frames of one GOP differ in shape".into()).into());
    }
    Ok(())
}

fn postprocess<F: Float>(codec: &Codec, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
    codec.postproc.forward(p, x)
}

/// Motion-compensated prediction from decoded references and the decoded
/// packed flow. Encoder and decoder both go through this and [`finish`],
/// so they produce identical frames.
fn predict<F: Float>(codec: &Codec, p: &Binding<F>, past: &Var<F>, future: &Var<F>, flow_hat: &Var<F>) -> Result<Var<F>> {
    let flow = FlowPair::unpack(flow_hat)?;
    Ok(motion_compensate(p, &codec.mask_net, past, future, &flow)?.0)
}

fn finish<F: Float>(codec: &Codec, p: &Binding<F>, prediction: &Var<F>, residual_hat: &Var<F>) -> Result<Var<F>> {
    postprocess(codec, p, &prediction.add(residual_hat)?)
}

/// Runs the closed coding loop over one group: intra units through the
/// image codec, bidirectional units through flow estimation from decoded
/// references, flow coding, motion compensation and residual coding.
/// Every reference is a post-processed reconstruction.
pub fn forward_gop<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    frames: &[Var<F>],
    structure: &GopStructure,
    q: &mut Quantizer,
    key: Option<&Var<F>>,
) -> Result<GopForward<F>> {
    check_frames(codec, frames, structure)?;
    let mut recon: Vec<Option<Var<F>>> = vec![None; structure.frame_count()];
    if structure.shared_key {
        let key = key.ok_or_else(|| Error::config("continuation GOP needs the decoded key frame"))?;
        if key.shape() != frames[0].shape() {
            return Err(TensorError::Shape("key frame shape differs from the GOP".into()).into());
        }
        recon[0] = Some(key.clone());
    }
    let (mut bits_image, mut bits_flow, mut bits_residual) = (zero(), zero(), zero());
    let mut streams = Vec::with_capacity(structure.units.len());
    let reference = |recon: &[Option<Var<F>>], i: usize| {
        recon[i].clone().ok_or_else(|| Error::config(format!("frame {i} referenced before it is decoded")))
    };
    for unit in &structure.units {
        let x = &frames[unit.target];
        match unit.kind {
            UnitKind::Intra => {
                let coded = codec.image.code(p, x, q)?;
                let bits = coded.total_rate()?;
                bits_image = bits_image.add(&bits)?;
                recon[unit.target] = Some(postprocess(codec, p, &coded.x_hat)?);
                streams.push(vec![CodedStream { kind: StreamKind::Intra, y_hat: coded.y_hat, z_hat: coded.z_hat, bits }]);
            }
            UnitKind::Bidirectional { left, right } => {
                let past = reference(&recon, left)?;
                let future = reference(&recon, right)?;
                let flow = estimate_bidirectional_flow(p, &codec.flow_net, &past, &future, x)?;
                let flow_coded = codec.flow_codec.code(p, &flow.pack()?, q)?;
                let prediction = predict(codec, p, &past, &future, &flow_coded.x_hat)?;
                let residual = x.sub(&prediction)?;
                let res_coded = codec.residual.code(p, &residual, q)?;
                let recon_frame = finish(codec, p, &prediction, &res_coded.x_hat)?;
                let fb = flow_coded.total_rate()?;
                let rb = res_coded.total_rate()?;
                bits_flow = bits_flow.add(&fb)?;
                bits_residual = bits_residual.add(&rb)?;
                recon[unit.target] = Some(recon_frame);
                streams.push(vec![
                    CodedStream { kind: StreamKind::Flow, y_hat: flow_coded.y_hat, z_hat: flow_coded.z_hat, bits: fb },
                    CodedStream { kind: StreamKind::Residual, y_hat: res_coded.y_hat, z_hat: res_coded.z_hat, bits: rb },
                ]);
            }
        }
    }
    let recon = recon
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::config(format!("schedule never codes frame {i}"))))
        .collect::<Result<Vec<_>>>()?;
    let (b, _, h, w) = frames[0].dims4()?;
    Ok(GopForward {
        structure: structure.clone(),
        recon,
        streams,
        bits_image,
        bits_flow,
        bits_residual,
        pixels: b * structure.coded_frames() * h * w,
    })
}

/// Integer symbols of one latent stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentStream {
    pub kind: StreamKind,
    pub main: Vec<i32>,
    pub hyper: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedUnit {
    pub target: usize,
    pub streams: Vec<LatentStream>,
}

/// Quantized symbols of one group in schedule order, decodable without
/// the original frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedGop {
    pub width: usize,
    pub height: usize,
    pub gop_size: usize,
    pub shared_key: bool,
    pub units: Vec<EncodedUnit>,
}

impl EncodedGop {
    pub fn structure(&self) -> Result<GopStructure> {
        match (self.gop_size, self.shared_key) {
            (0, false) => Ok(GopStructure::key_only()),
            (n, false) => coding_schedule(n),
            (n, true) => GopStructure::continuation(n),
        }
    }
}

/// Output of [`encode_gop`].
#[derive(Debug, Clone)]
pub struct GopEncoding<F: Float> {
    pub encoded: EncodedGop,
    pub recon: Vec<Tensor<F>>,
    pub breakdown: LossBreakdown,
    /// Estimated bits of all streams.
    pub bits: f64,
}

fn symbols<F: Float>(t: &Tensor<F>) -> Vec<i32> {
    t.data().iter().map(|v| v.as_f64() as i32).collect()
}

/// Encodes one group with hard quantization.
pub fn encode_gop<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    frames: &[Tensor<F>],
    structure: &GopStructure,
    lambda: f64,
    key: Option<&Tensor<F>>,
) -> Result<GopEncoding<F>> {
    let vars: Vec<_> = frames.iter().cloned().map(Var::constant).collect();
    if vars.first().map(|f| f.shape()[0]) != Some(1) {
        return Err(Error::config("bitstream encoding takes one sequence at a time (batch 1)"));
    }
    let key = key.cloned().map(Var::constant);
    let out = forward_gop(codec, p, &vars, structure, &mut Quantizer::round(), key.as_ref())?;
    let (_, breakdown) = out.loss(&vars, lambda)?;
    let (_, _, height, width) = vars[0].dims4()?;
    let units = structure
        .units
        .iter()
        .zip(&out.streams)
        .map(|(u, streams)| EncodedUnit {
            target: u.target,
            streams: streams
                .iter()
                .map(|s| LatentStream { kind: s.kind, main: symbols(s.y_hat.value()), hyper: symbols(s.z_hat.value()) })
                .collect(),
        })
        .collect();
    let encoded = EncodedGop { width, height, gop_size: structure.gop_size, shared_key: structure.shared_key, units };
    Ok(GopEncoding {
        encoded,
        recon: out.recon.iter().map(|v| v.value().clone()).collect(),
        breakdown,
        bits: out.total_bits(),
    })
}

fn stream_latent<F: Float>(
    codec: &Codec,
    stream: &LatentStream,
    expected: StreamKind,
    height: usize,
    width: usize,
    unit: usize,
) -> Result<Var<F>> {
    if stream.kind != expected {
        return Err(Error::Decode { unit, reason: format!("expected a {expected:?} stream, found {:?}", stream.kind) });
    }
    let (main, hyper) = latent_shapes(expected.codec(codec).config(), height, width);
    let (nm, nh) = (main.iter().product::<usize>(), hyper.iter().product::<usize>());
    if stream.main.len() != nm || stream.hyper.len() != nh {
        return Err(Error::Decode {
            unit,
            reason: format!(
                "{expected:?} stream has {}+{} symbols, expected {nm}+{nh}",
                stream.main.len(),
                stream.hyper.len()
            ),
        });
    }
    let data = stream.main.iter().map(|&s| F::from_f64(s as f64)).collect();
    Ok(Var::constant(Tensor::from_vec(&main, data)?))
}

/// Reconstructs frames `0..=N` of a group from its symbols. A group whose
/// frame 0 is shared needs the previous group's last frame as `key`.
pub fn decode_gop<F: Float>(
    codec: &Codec,
    p: &Binding<F>,
    encoded: &EncodedGop,
    key: Option<&Tensor<F>>,
) -> Result<Vec<Tensor<F>>> {
    let structure = encoded.structure()?;
    let (h, w) = (encoded.height, encoded.width);
    let align = codec.config().alignment();
    if h == 0 || w == 0 || h % align != 0 || w % align != 0 {
        return Err(Error::Decode { unit: 0, reason: format!("frame size {w}x{h} is not a multiple of {align}") });
    }
    if encoded.units.len() != structure.units.len() {
        let unit = encoded.units.len().min(structure.units.len());
        return Err(Error::Decode {
            unit,
            reason: format!("{} units present, schedule has {}", encoded.units.len(), structure.units.len()),
        });
    }
    let mut recon: Vec<Option<Var<F>>> = vec![None; structure.frame_count()];
    if structure.shared_key {
        let key = key.ok_or(Error::Decode { unit: 0, reason: "missing shared key frame".into() })?;
        if key.shape() != [1, 3, h, w] {
            return Err(Error::Decode { unit: 0, reason: "shared key frame has the wrong size".into() });
        }
        recon[0] = Some(Var::constant(key.clone()));
    }
    for (i, (unit, enc)) in structure.units.iter().zip(&encoded.units).enumerate() {
        if enc.target != unit.target {
            return Err(Error::Decode { unit: i, reason: format!("unit codes frame {}, expected {}", enc.target, unit.target) });
        }
        let expected: &[StreamKind] = match unit.kind {
            UnitKind::Intra => &[StreamKind::Intra],
            UnitKind::Bidirectional { .. } => &[StreamKind::Flow, StreamKind::Residual],
        };
        if enc.streams.len() != expected.len() {
            return Err(Error::Decode { unit: i, reason: format!("{} streams, expected {}", enc.streams.len(), expected.len()) });
        }
        let frame = match unit.kind {
            UnitKind::Intra => {
                let y_hat = stream_latent(codec, &enc.streams[0], StreamKind::Intra, h, w, i)?;
                postprocess(codec, p, &codec.image.decode(p, &y_hat)?)?
            }
            UnitKind::Bidirectional { left, right } => {
                let missing = || Error::Decode { unit: i, reason: "reference not decoded".into() };
                let past = recon[left].clone().ok_or_else(missing)?;
                let future = recon[right].clone().ok_or_else(missing)?;
                let flow_y = stream_latent(codec, &enc.streams[0], StreamKind::Flow, h, w, i)?;
                let res_y = stream_latent(codec, &enc.streams[1], StreamKind::Residual, h, w, i)?;
                let prediction = predict(codec, p, &past, &future, &codec.flow_codec.decode(p, &flow_y)?)?;
                finish(codec, p, &prediction, &codec.residual.decode(p, &res_y)?)?
            }
        };
        recon[unit.target] = Some(frame);
    }
    Ok(recon.into_iter().map(|r| r.expect("validated schedule").value().clone()).collect())
}
