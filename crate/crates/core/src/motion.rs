//! Bi-directional flow, backward warping and mask fusion.
//!
//! Flow fields live on the grid of the frame being predicted and point into
//! a reference: `warp(ref, v)(p) = ref(p + v(p))`, bilinear, with sampling
//! coordinates clamped to the border. Channel 0 is horizontal, channel 1
//! vertical.

use bgop_tensor::{Float, TensorError, Var};

use crate::error::Result;
use crate::nn::{Binding, FlowPyramid, MaskUnet};

/// Flows from the current frame into its past and future references.
#[derive(Debug, Clone)]
pub struct FlowPair<F: Float> {
    pub past: Var<F>,
    pub future: Var<F>,
}

impl<F: Float> FlowPair<F> {
    /// B×4×H×W as (past x, past y, future x, future y).
    pub fn pack(&self) -> Result<Var<F>> {
        Ok(Var::concat_channels(&[&self.past, &self.future])?)
    }

    pub fn unpack(packed: &Var<F>) -> Result<Self> {
        let (_, c, _, _) = packed.dims4()?;
        if c != 4 {
            return Err(TensorError::Shape(format!("packed flow has {c} channels, expected 4")).into());
        }
        Ok(Self { past: packed.slice_channels(0, 2)?, future: packed.slice_channels(2, 2)? })
    }
}

/// Both references warped onto the current grid.
#[derive(Debug, Clone)]
pub struct WarpResult<F: Float> {
    pub past: Var<F>,
    pub future: Var<F>,
}

pub fn estimate_bidirectional_flow<F: Float>(
    p: &Binding<F>,
    net: &FlowPyramid,
    past_ref: &Var<F>,
    future_ref: &Var<F>,
    current: &Var<F>,
) -> Result<FlowPair<F>> {
    Ok(FlowPair { past: net.estimate(p, past_ref, current)?, future: net.estimate(p, future_ref, current)? })
}

pub fn warp<F: Float>(frame: &Var<F>, flow: &Var<F>) -> Result<Var<F>> {
    Ok(frame.warp(flow)?)
}

/// `mask ⊙ past + (1 − mask) ⊙ future`.
pub fn fuse<F: Float>(warped: &WarpResult<F>, mask: &Var<F>) -> Result<Var<F>> {
    Ok(Var::blend(&warped.past, &warped.future, mask)?)
}

/// Motion-compensated prediction from the two references and the decoded
/// flow pair. Returns the prediction, the warped references and the mask.
pub fn motion_compensate<F: Float>(
    p: &Binding<F>,
    mask_net: &MaskUnet,
    past_ref: &Var<F>,
    future_ref: &Var<F>,
    flow: &FlowPair<F>,
) -> Result<(Var<F>, WarpResult<F>, Var<F>)> {
    let warped = WarpResult { past: warp(past_ref, &flow.past)?, future: warp(future_ref, &flow.future)? };
    let mask = mask_net.forward(p, &Var::concat_channels(&[&warped.past, &warped.future])?)?;
    let prediction = fuse(&warped, &mask)?;
    Ok((prediction, warped, mask))
}
