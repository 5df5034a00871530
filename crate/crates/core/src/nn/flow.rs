use bgop_tensor::{Float, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use super::params::{Binding, ParamSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub levels: usize,
    pub channels: usize,
    /// Zero the last conv of every level so the estimate starts at zero.
    #[serde(default)]
    pub zero_init_output: bool,
}

/// Coarse-to-fine residual flow estimator. Level 0 is the coarsest.
#[derive(Debug, Clone)]
pub struct FlowPyramid {
    config: FlowConfig,
    levels: Vec<[Conv; 3]>,
}

impl FlowPyramid {
    pub fn new(name: &str, config: FlowConfig) -> Result<Self> {
        if config.levels == 0 || config.channels == 0 {
            return Err(Error::config("flow pyramid needs at least one level and channel"));
        }
        let c = config.channels;
        let out_scale = if config.zero_init_output { 0.0 } else { 1.0 };
        let levels = (0..config.levels)
            .map(|l| {
                let prefix = format!("{name}.level{l}");
                [
                    Conv::new(&format!("{prefix}.conv0"), 8, c, 3, 1),
                    Conv::new(&format!("{prefix}.conv1"), c, c, 3, 1),
                    Conv::new(&format!("{prefix}.conv2"), c, 2, 3, 1).with_init_scale(out_scale),
                ]
            })
            .collect();
        Ok(Self { config, levels })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.levels.iter().flatten().flat_map(Conv::specs).collect()
    }

    /// Spatial size at which the coarsest level runs.
    pub fn coarsest_extent(&self, extent: usize) -> usize {
        extent >> (self.config.levels - 1)
    }

    /// Flow on the grid of `current` pointing into `reference`, B×2×H×W.
    pub fn estimate<F: Float>(&self, p: &Binding<F>, reference: &Var<F>, current: &Var<F>) -> Result<Var<F>> {
        let (b, c, h, w) = current.dims4()?;
        let align = 1 << (self.config.levels - 1);
        if reference.shape() != current.shape() || c != 3 || h % align != 0 || w % align != 0 {
            return Err(TensorError::Shape(format!(
                "flow inputs {:?} / {:?} must match, have 3 channels and sides divisible by {align}",
                reference.shape(),
                current.shape()
            ))
            .into());
        }
        let mut refs = vec![reference.clone()];
        let mut curs = vec![current.clone()];
        for _ in 1..self.config.levels {
            refs.push(refs.last().expect("nonempty").avg_pool2()?);
            curs.push(curs.last().expect("nonempty").avg_pool2()?);
        }
        let (ch, cw) = (h / align, w / align);
        let mut flow = Var::constant(Tensor::zeros(&[b, 2, ch, cw]));
        for (l, convs) in self.levels.iter().enumerate() {
            let depth = self.config.levels - 1 - l;
            if l > 0 {
                flow = flow.upsample2()?.scale(F::from_f64(2.0));
            }
            let warped = refs[depth].warp(&flow)?;
            let input = Var::concat_channels(&[&warped, &curs[depth], &flow])?;
            let hidden = convs[0].forward(p, &input)?.leaky_relu(F::from_f64(0.1));
            let hidden = convs[1].forward(p, &hidden)?.leaky_relu(F::from_f64(0.1));
            flow = flow.add(&convs[2].forward(p, &hidden)?)?;
        }
        Ok(flow)
    }
}
