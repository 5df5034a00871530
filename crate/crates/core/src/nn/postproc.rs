use bgop_tensor::{Float, Var};
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use super::params::{Binding, ParamSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    pub channels: usize,
    pub blocks: usize,
    /// Zero the head, the tail and the last conv of every block so the
    /// unit starts as the identity.
    #[serde(default)]
    pub zero_init_output: bool,
}

/// Residual-block refinement with a global skip from input to output.
#[derive(Debug, Clone)]
pub struct PostProc {
    head: Conv,
    blocks: Vec<(Conv, Conv)>,
    tail: Conv,
}

impl PostProc {
    pub fn new(name: &str, config: &PostprocConfig) -> Result<Self> {
        let c = config.channels;
        if c == 0 {
            return Err(Error::config("post-processing needs at least one channel"));
        }
        let zero = if config.zero_init_output { 0.0 } else { 1.0 };
        let blocks = (0..config.blocks)
            .map(|i| {
                (
                    Conv::new(&format!("{name}.block{i}.conv0"), c, c, 3, 1),
                    // small residual branches keep the stack near identity
                    Conv::new(&format!("{name}.block{i}.conv1"), c, c, 3, 1).with_init_scale(0.1 * zero),
                )
            })
            .collect();
        Ok(Self {
            head: Conv::new(&format!("{name}.head"), 3, c, 3, 1).with_init_scale(zero),
            blocks,
            tail: Conv::new(&format!("{name}.tail"), c, 3, 3, 1).with_init_scale(0.1 * zero),
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.head.specs();
        for (a, b) in &self.blocks {
            specs.extend(a.specs());
            specs.extend(b.specs());
        }
        specs.extend(self.tail.specs());
        specs
    }

    pub fn forward<F: Float>(&self, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
        let mut h = self.head.forward(p, x)?;
        for (a, b) in &self.blocks {
            let r = b.forward(p, &a.forward(p, &h)?.relu())?;
            h = h.add(&r)?;
        }
        Ok(x.add(&self.tail.forward(p, &h)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use bgop_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_block_count_and_identity_init() {
        let cfg = PostprocConfig { channels: 64, blocks: 12, zero_init_output: true };
        let net = PostProc::new("postproc", &cfg).unwrap();
        assert_eq!(net.block_count(), 12);
        let store = ParamStore::<f32>::from_specs(&net.specs(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Var::constant(Tensor::from_fn(&[1, 3, 64, 64], |i| (i % 97) as f32 / 97.0));
        let y = net.forward(&Binding::frozen(&store), &x).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn shape_preserved_with_random_init() {
        let cfg = PostprocConfig { channels: 8, blocks: 2, zero_init_output: false };
        let net = PostProc::new("postproc", &cfg).unwrap();
        let store = ParamStore::<f32>::from_specs(&net.specs(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Var::constant(Tensor::full(&[1, 3, 64, 64], 0.25));
        let y = net.forward(&Binding::frozen(&store), &x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_ne!(y.value(), x.value());
    }
}
