use bgop_tensor::{Float, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest magnitude a coded symbol may take; rounded latents are clamped
/// to `±SYMBOL_LIMIT` so spans fit the signed 16-bit container fields.
pub const SYMBOL_LIMIT: i32 = i16::MAX as i32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerMode {
    /// Additive `U(−0.5, 0.5)` noise with identity gradient (training).
    Noise,
    /// Round half away from zero (inference and bitstreams).
    Round,
}

/// Round half away from zero.
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Quantizer with its own seeded noise source.
#[derive(Debug, Clone)]
pub struct Quantizer {
    mode: QuantizerMode,
    rng: ChaCha8Rng,
}

impl Quantizer {
    pub fn new(mode: QuantizerMode, seed: u64) -> Self {
        Self { mode, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn round() -> Self {
        Self::new(QuantizerMode::Round, 0)
    }

    pub fn mode(&self) -> QuantizerMode {
        self.mode
    }

    /// Noise mode passes gradients straight through; round mode detaches.
    pub fn quantize<F: Float>(&mut self, y: &Var<F>) -> Var<F> {
        match self.mode {
            QuantizerMode::Noise => {
                let noise = Tensor::from_fn(y.shape(), |_| F::from_f64(self.rng.gen_range(-0.5..0.5)));
                y.add(&Var::constant(noise)).expect("same shape")
            }
            QuantizerMode::Round => Var::constant(round_tensor(y.value())),
        }
    }
}

/// Elementwise rounding, clamped to the coded symbol range.
pub fn round_tensor<F: Float>(y: &Tensor<F>) -> Tensor<F> {
    let limit = SYMBOL_LIMIT as f64;
    y.map(|v| F::from_f64(round_half_away(v.as_f64()).clamp(-limit, limit)))
}
