use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Image codec, with post-processing unless it is split off.
    ImagePretrain,
    /// Flow codec and mask network on frame triplets; the flow network too
    /// unless frozen.
    FlowCompressionPretrain,
    PostprocPretrain,
    EndToEnd,
}

impl Stage {
    /// Parameter prefixes the stage may update.
    pub fn prefixes(&self, cfg: &TrainConfig) -> Vec<&'static str> {
        match self {
            Stage::ImagePretrain if cfg.joint_postproc => vec!["image.", "postproc."],
            Stage::ImagePretrain => vec!["image."],
            Stage::FlowCompressionPretrain if cfg.freeze_flow => vec!["flow_codec.", "mask_net."],
            Stage::FlowCompressionPretrain => vec!["flow_codec.", "flow_net.", "mask_net."],
            Stage::PostprocPretrain => vec!["postproc."],
            Stage::EndToEnd => vec!["image.", "flow_codec.", "residual.", "flow_net.", "mask_net.", "postproc."],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub random_crop: bool,
    /// Multiples of 90 degrees.
    pub random_rotation: bool,
    /// Reverses the frame order of a GOP or triplet sample.
    pub temporal_flip: bool,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { random_crop: true, random_rotation: true, temporal_flip: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub crop: usize,
    pub lambda: f64,
    pub seed: u64,
    pub freeze_flow: bool,
    /// Train post-processing together with the image codec.
    pub joint_postproc: bool,
    pub gop_size: usize,
    pub augment: AugmentationSpec,
    /// Window of the moving average used for smoothed loss.
    pub smoothing: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(Stage::EndToEnd)
    }
}

impl TrainConfig {
    /// Settings sized for a single CPU core.
    pub fn desk(stage: Stage) -> Self {
        Self {
            stage,
            learning_rate: 3e-4,
            batch_size: 4,
            steps: 2000,
            crop: 64,
            lambda: 512.0,
            seed: 0,
            freeze_flow: false,
            joint_postproc: true,
            gop_size: 2,
            augment: AugmentationSpec::default(),
            smoothing: 100,
        }
    }

    pub fn paper(stage: Stage) -> Self {
        let (learning_rate, batch_size, steps, crop) = match stage {
            Stage::EndToEnd => (1e-5, 4, 100_000, 256),
            _ => (3e-5, 16, 400_000, 256),
        };
        Self { learning_rate, batch_size, steps, crop, gop_size: 4, ..Self::desk(stage) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.crop == 0 || self.crop % 64 != 0 {
            return Err(Error::config(format!("crop {} is not a positive multiple of 64", self.crop)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda {} must be finite and nonnegative", self.lambda)));
        }
        if self.gop_size == 0 || !self.gop_size.is_power_of_two() {
            return Err(Error::config(format!("GOP size {} is not a power of two", self.gop_size)));
        }
        if self.smoothing == 0 {
            return Err(Error::config("smoothing window must be at least 1"));
        }
        Ok(())
    }
}
