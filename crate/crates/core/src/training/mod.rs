//! Staged pretraining and end-to-end GOP training under one
//! rate-distortion loss.

mod config;
mod optim;
mod sampler;

use std::collections::BTreeMap;
use std::io::Write;

use bgop_tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{AugmentationSpec, Stage, TrainConfig};
pub use optim::Adam;
pub use sampler::{crop, rotate, ClipSampler};

use crate::entropy::{Quantizer, QuantizerMode};
use crate::error::{Error, Result};
use crate::gop::{coding_schedule, encode_sequence, forward_gop, rd_loss, LossBreakdown};
use crate::metrics::{psnr, RdPoint};
use crate::motion::{estimate_bidirectional_flow, motion_compensate, FlowPair};
use crate::nn::{Binding, Codec, ParamStore, Trainable};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    pub lambda: f64,
    pub loss: f64,
    pub distortion: f64,
    pub r_image: f64,
    pub r_flow: f64,
    pub r_residual: f64,
}

impl StepRecord {
    fn new(step: usize, stage: Stage, b: &LossBreakdown) -> Self {
        Self {
            step,
            stage,
            lambda: b.lambda,
            loss: b.loss,
            distortion: b.distortion,
            r_image: b.r_image,
            r_flow: b.r_flow,
            r_residual: b.r_residual,
        }
    }
}

/// Gradient L2 norm per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAudit {
    pub group_norms: BTreeMap<String, f64>,
}

impl GradientAudit {
    /// Groups whose gradient is zero everywhere.
    pub fn dead_groups(&self) -> Vec<&str> {
        self.group_norms.iter().filter(|(_, n)| !(**n > 0.0)).map(|(g, _)| g.as_str()).collect()
    }
}

/// Sums squared gradients per group (the name up to the first dot).
/// Every group in `groups` appears, zero if no parameter of it got a
/// gradient.
pub fn audit_gradients<F: bgop_tensor::Float>(groups: &[&str], grads: &BTreeMap<String, Tensor<F>>) -> GradientAudit {
    let mut sq: BTreeMap<String, f64> = groups.iter().map(|g| (g.to_string(), 0.0)).collect();
    for (name, g) in grads {
        let group = name.split('.').next().unwrap_or_default();
        if let Some(acc) = sq.get_mut(group) {
            *acc += g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
    }
    GradientAudit { group_norms: sq.into_iter().map(|(g, s)| (g, s.sqrt())).collect() }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// Mean loss over the first smoothing window.
    pub initial_smoothed: f64,
    /// Mean loss over the last smoothing window.
    pub final_smoothed: f64,
    /// Set for end-to-end runs, from the first step.
    pub audit: Option<GradientAudit>,
}

/// Loss of one batch for `stage`. `frames` holds the clip, one batched
/// tensor per time step.
pub fn stage_loss(
    codec: &Codec,
    p: &Binding<f32>,
    stage: Stage,
    cfg: &TrainConfig,
    frames: &[Var<f32>],
    q: &mut Quantizer,
) -> Result<(Var<f32>, LossBreakdown)> {
    let lambda = cfg.lambda;
    let first = frames.first().ok_or_else(|| Error::Training("empty clip".into()))?;
    let (b, _, h, w) = first.dims4()?;
    let per_pixel = 1.0 / (b * h * w) as f64;
    let weigh = |d: &Var<f32>, bits: &Var<f32>| -> Result<Var<f32>> {
        Ok(d.scale(lambda as f32).add(&bits.scale(per_pixel as f32))?)
    };
    match stage {
        Stage::ImagePretrain | Stage::PostprocPretrain => {
            let coded = codec.image.code(p, first, q)?;
            let recon = if stage == Stage::PostprocPretrain || cfg.joint_postproc {
                codec.postproc.forward(p, &coded.x_hat)?
            } else {
                coded.x_hat.clone()
            };
            let d = recon.mse(first)?;
            let bits = coded.total_rate()?;
            let b = rd_loss(d.item() as f64, bits.item() as f64 * per_pixel, 0.0, 0.0, lambda)?;
            let loss = if stage == Stage::PostprocPretrain { d.scale(lambda as f32) } else { weigh(&d, &bits)? };
            Ok((loss, b))
        }
        Stage::FlowCompressionPretrain => {
            let [past, current, future] = frames else {
                return Err(Error::Training(format!("flow pretraining takes triplets, got {} frames", frames.len())));
            };
            let flow = estimate_bidirectional_flow(p, &codec.flow_net, past, future, current)?;
            let coded = codec.flow_codec.code(p, &flow.pack()?, q)?;
            let decoded = FlowPair::unpack(&coded.x_hat)?;
            let (prediction, _, _) = motion_compensate(p, &codec.mask_net, past, future, &decoded)?;
            let d = prediction.mse(current)?;
            let bits = coded.total_rate()?;
            let b = rd_loss(d.item() as f64, 0.0, bits.item() as f64 * per_pixel, 0.0, lambda)?;
            Ok((weigh(&d, &bits)?, b))
        }
        Stage::EndToEnd => {
            let n = frames.len() - 1;
            let out = forward_gop(codec, p, frames, &coding_schedule(n)?, q, None)?;
            out.loss(frames, lambda)
        }
    }
}

fn clip_shape(stage: Stage, cfg: &TrainConfig) -> usize {
    match stage {
        Stage::ImagePretrain | Stage::PostprocPretrain => 1,
        Stage::FlowCompressionPretrain => 3,
        Stage::EndToEnd => cfg.gop_size + 1,
    }
}

/// Runs `cfg.steps` optimizer steps of `cfg.stage` on `sequences`,
/// updating `store` in place. Only parameters of the stage's groups
/// change. The first end-to-end step audits gradients and fails if any
/// group receives none.
pub fn train(
    codec: &Codec,
    store: &mut ParamStore<f32>,
    sequences: &[Vec<Tensor<f32>>],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Training("empty dataset".into()));
    }
    let length = clip_shape(cfg.stage, cfg);
    let sampler = ClipSampler::new(sequences, length, cfg.crop, cfg.augment)?;
    let prefixes = cfg.stage.prefixes(cfg);
    let trainable = Trainable::prefixes(&prefixes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut audit = None;
    for step in 0..cfg.steps {
        let stride = if cfg.stage == Stage::FlowCompressionPretrain { rng.gen_range(1..=2) } else { 1 };
        let clip = sampler.batch(&mut rng, cfg.batch_size, length, stride)?;
        let frames: Vec<_> = clip.into_iter().map(Var::constant).collect();
        let mut q = Quantizer::new(QuantizerMode::Noise, rng.gen());
        let grads = {
            let p = Binding::new(store, trainable.clone());
            let (loss, breakdown) = stage_loss(codec, &p, cfg.stage, cfg, &frames, &mut q)?;
            if !breakdown.loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at step {step}")));
            }
            let grads = p.collect_gradients(&loss.backward()?);
            let record = StepRecord::new(step, cfg.stage, &breakdown);
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&record).map_err(|e| Error::Training(e.to_string()))?;
                writeln!(w, "{line}").map_err(|e| Error::Training(format!("log write failed: {e}")))?;
            }
            records.push(record);
            grads
        };
        if step == 0 && cfg.stage == Stage::EndToEnd {
            let groups: Vec<&str> = prefixes.iter().map(|p| p.trim_end_matches('.')).collect();
            let a = audit_gradients(&groups, &grads);
            let dead = a.dead_groups();
            if !dead.is_empty() {
                return Err(Error::Training(format!("no gradient reaches {}", dead.join(", "))));
            }
            audit = Some(a);
        }
        optimizer.update(store, &grads)?;
    }
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let window = cfg.smoothing.min(losses.len());
    Ok(TrainReport {
        initial_smoothed: mean_of(&losses[..window]),
        final_smoothed: mean_of(&losses[losses.len() - window..]),
        records,
        audit,
    })
}

/// One end-to-end forward and backward pass on `frames` (a GOP of N + 1
/// frames) with every group trainable.
pub fn gradient_audit(
    codec: &Codec,
    store: &ParamStore<f32>,
    frames: &[Tensor<f32>],
    lambda: f64,
    seed: u64,
) -> Result<GradientAudit> {
    let p = Binding::new(store, Trainable::All);
    let vars: Vec<_> = frames.iter().cloned().map(Var::constant).collect();
    let cfg = TrainConfig { lambda, gop_size: frames.len().saturating_sub(1), ..TrainConfig::desk(Stage::EndToEnd) };
    let mut q = Quantizer::new(QuantizerMode::Noise, seed);
    let (loss, _) = stage_loss(codec, &p, Stage::EndToEnd, &cfg, &vars, &mut q)?;
    let grads = p.collect_gradients(&loss.backward()?);
    Ok(audit_gradients(&Codec::GROUPS, &grads))
}

/// Rate and quality of hard-quantized coding of whole sequences, with
/// rates from the entropy model.
pub fn evaluate(
    codec: &Codec,
    store: &ParamStore<f32>,
    sequences: &[Vec<Tensor<f32>>],
    gop_size: usize,
    lambda: f64,
) -> Result<RdPoint> {
    let p = Binding::frozen(store);
    let (mut bits, mut pixels) = (0.0, 0usize);
    let (mut originals, mut decoded) = (Vec::new(), Vec::new());
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let enc = encode_sequence(codec, &p, seq, gop_size)?;
        bits += enc.bits;
        pixels += seq.iter().map(|f| f.shape()[2] * f.shape()[3]).sum::<usize>();
        originals.extend(seq.iter().cloned());
        decoded.extend(enc.recon);
    }
    if pixels == 0 {
        return Err(Error::Training("empty evaluation set".into()));
    }
    Ok(RdPoint { lambda, bpp: bits / pixels as f64, psnr: psnr(&originals, &decoded)? })
}

/// Trains one model per λ, each starting from `init`, and evaluates it.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub point: RdPoint,
    pub report: TrainReport,
    pub params: ParamStore<f32>,
}

pub fn lambda_sweep(
    codec: &Codec,
    init: &ParamStore<f32>,
    lambdas: &[f64],
    base: &TrainConfig,
    train_set: &[Vec<Tensor<f32>>],
    eval_set: &[Vec<Tensor<f32>>],
) -> Result<Vec<SweepEntry>> {
    if lambdas.len() < 2 {
        return Err(Error::config("a λ sweep needs at least two values"));
    }
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("λ values must be strictly ascending"));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let annotate = |e: Error| Error::Training(format!("λ = {lambda}: {e}"));
            let mut params = init.clone();
            let cfg = TrainConfig { lambda, ..base.clone() };
            let report = train(codec, &mut params, train_set, &cfg, None).map_err(annotate)?;
            let point = evaluate(codec, &params, eval_set, base.gop_size, lambda).map_err(annotate)?;
            Ok(SweepEntry { point, report, params })
        })
        .collect()
}
