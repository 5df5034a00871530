//! Probability models for quantized latents: a conditional Laplace for
//! main latents, a unit Laplace for hyper latents, the quantizer, and the
//! pmf tables handed to an entropy coder.

mod laplace;
mod pmf;
mod quantize;

pub use laplace::{
    element_bits, hyper_rate_bits, laplace_bin_prob, laplace_rate, rate_bits, unit_laplace_rate, Laplace,
    LaplaceParams, RateEstimate, B_MIN, P_FLOOR,
};
pub use pmf::{build_pmf_table, quantize_pmf, CdfTable, PmfTable, FREQ_TOTAL};
pub use quantize::{round_half_away, round_tensor, QuantizerMode, Quantizer, SYMBOL_LIMIT};
