//! Hierarchical bi-directional learned video codec.
//!
//! Key frames are coded by a hyperprior image autoencoder; frames between
//! keys are predicted from two decoded references in dyadic order, using
//! estimated and compressed bi-directional flow, learned mask fusion and a
//! compressed residual. Every stage is differentiable, so the whole group
//! of pictures is trained under one rate-distortion loss.

pub mod bitstream;
pub mod data;
pub mod entropy;
pub mod gop;
pub mod metrics;
pub mod motion;
mod error;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
