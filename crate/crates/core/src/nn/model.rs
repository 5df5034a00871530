use bgop_tensor::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::{AutoencoderConfig, HyperpriorCodec};
use super::flow::{FlowConfig, FlowPyramid};
use super::mask::{MaskConfig, MaskUnet};
use super::params::{ParamSpec, ParamStore};
use super::postproc::{PostProc, PostprocConfig};
use crate::error::{Error, Result};

/// Preset network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Small enough to train on one CPU core in minutes.
    Desk,
    /// 96/192-channel autoencoders, 64-channel 12-block post-processing.
    Paper,
    /// A few channels per layer, for tests and smoke runs.
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image: AutoencoderConfig,
    pub flow_codec: AutoencoderConfig,
    pub residual: AutoencoderConfig,
    pub flow: FlowConfig,
    pub mask: MaskConfig,
    pub postproc: PostprocConfig,
}

impl ModelConfig {
    pub fn new(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self {
                image: AutoencoderConfig::new(3, 48, 96),
                flow_codec: AutoencoderConfig::new(4, 48, 96),
                residual: AutoencoderConfig::new(3, 48, 96),
                flow: FlowConfig { levels: 3, channels: 16, zero_init_output: false },
                mask: MaskConfig { channels: 8, zero_init_output: false },
                postproc: PostprocConfig { channels: 8, blocks: 12, zero_init_output: false },
            },
            Scale::Paper => Self {
                image: AutoencoderConfig::new(3, 96, 192),
                flow_codec: AutoencoderConfig::new(4, 96, 192),
                residual: AutoencoderConfig::new(3, 96, 192),
                flow: FlowConfig { levels: 5, channels: 32, zero_init_output: false },
                mask: MaskConfig { channels: 32, zero_init_output: false },
                postproc: PostprocConfig { channels: 64, blocks: 12, zero_init_output: false },
            },
            Scale::Tiny => Self {
                image: AutoencoderConfig::new(3, 8, 8),
                flow_codec: AutoencoderConfig::new(4, 8, 8),
                residual: AutoencoderConfig::new(3, 8, 8),
                flow: FlowConfig { levels: 2, channels: 4, zero_init_output: false },
                mask: MaskConfig { channels: 4, zero_init_output: false },
                postproc: PostprocConfig { channels: 4, blocks: 2, zero_init_output: false },
            },
        }
    }

    pub fn desk() -> Self {
        Self::new(Scale::Desk)
    }

    pub fn paper() -> Self {
        Self::new(Scale::Paper)
    }

    pub fn tiny() -> Self {
        Self::new(Scale::Tiny)
    }

    /// Frame sides must be multiples of this.
    pub fn alignment(&self) -> usize {
        [
            self.image.alignment(),
            self.flow_codec.alignment(),
            self.residual.alignment(),
            1 << (self.flow.levels - 1),
            4,
        ]
        .into_iter()
        .max()
        .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.flow_codec.validate()?;
        self.residual.validate()?;
        if self.image.input_channels != 3 || self.residual.input_channels != 3 {
            return Err(Error::config("image and residual codecs take 3 channels"));
        }
        if self.flow_codec.input_channels != 4 {
            return Err(Error::config("the flow codec takes a packed 4-channel flow pair"));
        }
        Ok(())
    }
}

/// All sub-networks of the codec. Weights live in a separate
/// [`ParamStore`] under the prefixes `image.`, `flow_codec.`, `residual.`,
/// `flow_net.`, `mask_net.` and `postproc.`.
#[derive(Debug, Clone)]
pub struct Codec {
    config: ModelConfig,
    pub image: HyperpriorCodec,
    pub flow_codec: HyperpriorCodec,
    pub residual: HyperpriorCodec,
    pub flow_net: FlowPyramid,
    pub mask_net: MaskUnet,
    pub postproc: PostProc,
}

impl Codec {
    pub const GROUPS: [&'static str; 6] = ["image", "flow_codec", "residual", "flow_net", "mask_net", "postproc"];

    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            image: HyperpriorCodec::new("image", config.image.clone())?,
            flow_codec: HyperpriorCodec::new("flow_codec", config.flow_codec.clone())?,
            residual: HyperpriorCodec::new("residual", config.residual.clone())?,
            flow_net: FlowPyramid::new("flow_net", config.flow.clone())?,
            mask_net: MaskUnet::new("mask_net", &config.mask)?,
            postproc: PostProc::new("postproc", &config.postproc)?,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.image.specs();
        specs.extend(self.flow_codec.specs());
        specs.extend(self.residual.specs());
        specs.extend(self.flow_net.specs());
        specs.extend(self.mask_net.specs());
        specs.extend(self.postproc.specs());
        specs
    }

    pub fn init_params<F: Float>(&self, seed: u64) -> Result<ParamStore<F>> {
        ParamStore::from_specs(&self.specs(), &mut ChaCha8Rng::seed_from_u64(seed))
    }
}
