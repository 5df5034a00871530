use bgop_tensor::{Float, TensorError, Var};
use serde::{Deserialize, Serialize};

use super::layers::{Conv, ConvUp};
use super::params::{Binding, ParamSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub channels: usize,
    /// Zero the output conv so the mask starts at 0.5.
    #[serde(default)]
    pub zero_init_output: bool,
}

/// Two-level U-net from the two warped references (6 channels) to a
/// one-channel sigmoid mask.
#[derive(Debug, Clone)]
pub struct MaskUnet {
    enc0: Conv,
    enc1: Conv,
    enc2: Conv,
    up1: ConvUp,
    dec1: Conv,
    up0: ConvUp,
    out: Conv,
}

impl MaskUnet {
    pub fn new(name: &str, config: &MaskConfig) -> Result<Self> {
        let c = config.channels;
        if c == 0 {
            return Err(Error::config("mask net needs at least one channel"));
        }
        let out_scale = if config.zero_init_output { 0.0 } else { 1.0 };
        Ok(Self {
            enc0: Conv::new(&format!("{name}.enc0"), 6, c, 3, 1),
            enc1: Conv::new(&format!("{name}.enc1"), c, 2 * c, 3, 2),
            enc2: Conv::new(&format!("{name}.enc2"), 2 * c, 2 * c, 3, 2),
            up1: ConvUp::new(&format!("{name}.up1"), 2 * c, 2 * c, 3),
            dec1: Conv::new(&format!("{name}.dec1"), 4 * c, c, 3, 1),
            up0: ConvUp::new(&format!("{name}.up0"), c, c, 3),
            out: Conv::new(&format!("{name}.out"), 2 * c, 1, 3, 1).with_init_scale(out_scale),
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for conv in [&self.enc0, &self.enc1, &self.enc2, &self.dec1, &self.out] {
            specs.extend(conv.specs());
        }
        specs.extend(self.up1.specs());
        specs.extend(self.up0.specs());
        specs
    }

    pub fn forward<F: Float>(&self, p: &Binding<F>, warped: &Var<F>) -> Result<Var<F>> {
        let (_, c, h, w) = warped.dims4()?;
        if c != 6 || h % 4 != 0 || w % 4 != 0 {
            return Err(TensorError::Shape(format!(
                "mask input {:?} needs 6 channels and sides divisible by 4",
                warped.shape()
            ))
            .into());
        }
        let e0 = self.enc0.forward(p, warped)?.relu();
        let e1 = self.enc1.forward(p, &e0)?.relu();
        let e2 = self.enc2.forward(p, &e1)?.relu();
        let d1 = self.up1.forward(p, &e2)?.relu();
        let d1 = self.dec1.forward(p, &Var::concat_channels(&[&d1, &e1])?)?.relu();
        let d0 = self.up0.forward(p, &d1)?.relu();
        let logits = self.out.forward(p, &Var::concat_channels(&[&d0, &e0])?)?;
        Ok(logits.sigmoid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use bgop_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(zero: bool) -> Var<f32> {
        let net = MaskUnet::new("mask_net", &MaskConfig { channels: 4, zero_init_output: zero }).unwrap();
        let store = ParamStore::<f32>::from_specs(&net.specs(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Var::constant(Tensor::from_fn(&[1, 6, 64, 64], |i| (i as f32 * 0.013).cos()));
        net.forward(&Binding::frozen(&store), &x).unwrap()
    }

    #[test]
    fn mask_shape_and_range() {
        let m = run(false);
        assert_eq!(m.shape(), &[1, 1, 64, 64]);
        assert!(m.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_output_layer_gives_half() {
        assert!(run(true).value().data().iter().all(|&v| v == 0.5));
    }
}
