//! Network building blocks and the codec's sub-networks.

mod autoencoder;
mod checkpoint;
mod flow;
mod layers;
mod mask;
mod model;
mod params;
mod postproc;

pub use autoencoder::{AutoencoderConfig, CodedLatents, HyperpriorCodec};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use flow::{FlowConfig, FlowPyramid};
pub use layers::{gdn, softplus_inverse, Conv, ConvUp, GdnLayer, GdnParams, GDN_PARAM_FLOOR};
pub use mask::{MaskConfig, MaskUnet};
pub use model::{Codec, ModelConfig, Scale};
pub use params::{Binding, Init, ParamSpec, ParamStore, Trainable};
pub use postproc::{PostProc, PostprocConfig};
