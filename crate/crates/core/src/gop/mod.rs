//! Hierarchical group-of-pictures coding: schedule, closed-loop
//! encode/decode and rate-distortion bookkeeping.

mod engine;
mod loss;
mod schedule;
mod sequence;

pub use engine::{
    decode_gop, encode_gop, forward_gop, latent_shapes, CodedStream, EncodedGop, EncodedUnit, GopEncoding,
    GopForward, LatentStream, StreamKind,
};
pub use loss::{rd_loss, LossBreakdown};
pub use schedule::{coding_schedule, CodingUnit, GopStructure, UnitKind};
pub use sequence::{decode_sequence, encode_sequence, sequence_plan, GopSpan, SequenceEncoding};
