mod conv;
mod elementwise;
mod gdn;
mod sample;

pub use conv::ConvGeometry;
pub(crate) use elementwise::{sigmoid, softplus};
