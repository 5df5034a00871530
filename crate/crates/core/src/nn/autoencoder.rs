use bgop_tensor::{Float, TensorError, Var};
use serde::{Deserialize, Serialize};

use super::layers::{Conv, ConvUp, GdnLayer};
use super::params::{Binding, ParamSpec};
use crate::entropy::{laplace_rate, unit_laplace_rate, LaplaceParams, Quantizer, B_MIN};
use crate::error::{Error, Result};

const MAIN_KERNEL: usize = 5;
const HYPER_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub latent_channels: usize,
    /// Channels of the hyper latent.
    pub hyper_channels: usize,
    pub down_layers: usize,
    pub hyper_down_layers: usize,
    /// Predict only the scale; the location is fixed at zero.
    #[serde(default)]
    pub scale_only: bool,
}

impl AutoencoderConfig {
    pub fn new(input_channels: usize, hidden_channels: usize, latent_channels: usize) -> Self {
        Self {
            input_channels,
            hidden_channels,
            latent_channels,
            hyper_channels: hidden_channels,
            down_layers: 4,
            hyper_down_layers: 2,
            scale_only: false,
        }
    }

    /// Spatial divisor of the whole analysis stack, hyper levels included.
    pub fn alignment(&self) -> usize {
        1 << (self.down_layers + self.hyper_down_layers)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.input_channels, self.hidden_channels, self.latent_channels, self.hyper_channels];
        if counts.contains(&0) || self.down_layers == 0 {
            return Err(Error::config("autoencoder channel and layer counts must be positive"));
        }
        if self.down_layers + self.hyper_down_layers > 12 {
            return Err(Error::config("autoencoder is too deep"));
        }
        Ok(())
    }
}

/// Quantized latents of one coding pass and their estimated rates.
#[derive(Debug, Clone)]
pub struct CodedLatents<F: Float> {
    pub y_hat: Var<F>,
    pub z_hat: Var<F>,
    pub x_hat: Var<F>,
    /// Bits of the main latent, scalar.
    pub rate_main: Var<F>,
    /// Bits of the hyper latent, scalar.
    pub rate_hyper: Var<F>,
}

impl<F: Float> CodedLatents<F> {
    pub fn total_rate(&self) -> Result<Var<F>> {
        Ok(self.rate_main.add(&self.rate_hyper)?)
    }
}

/// Strided GDN autoencoder with a hyperprior predicting per-element
/// Laplace parameters of its latent.
#[derive(Debug, Clone)]
pub struct HyperpriorCodec {
    config: AutoencoderConfig,
    analysis: Vec<(Conv, Option<GdnLayer>)>,
    synthesis: Vec<(ConvUp, Option<GdnLayer>)>,
    hyper_analysis: Vec<Conv>,
    hyper_synthesis: Vec<ConvUp>,
    hyper_out: Conv,
}

impl HyperpriorCodec {
    pub fn new(name: &str, config: AutoencoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.down_layers;
        let analysis = (0..d)
            .map(|i| {
                let cin = if i == 0 { c.input_channels } else { c.hidden_channels };
                let cout = if i + 1 == d { c.latent_channels } else { c.hidden_channels };
                let conv = Conv::new(&format!("{name}.analysis.{i}"), cin, cout, MAIN_KERNEL, 2);
                let gdn = (i + 1 < d).then(|| GdnLayer::new(&format!("{name}.analysis.{i}.gdn"), cout, false));
                (conv, gdn)
            })
            .collect();
        let synthesis = (0..d)
            .map(|i| {
                let cin = if i == 0 { c.latent_channels } else { c.hidden_channels };
                let cout = if i + 1 == d { c.input_channels } else { c.hidden_channels };
                let up = ConvUp::new(&format!("{name}.synthesis.{i}"), cin, cout, MAIN_KERNEL);
                let igdn = (i + 1 < d).then(|| GdnLayer::new(&format!("{name}.synthesis.{i}.igdn"), cout, true));
                (up, igdn)
            })
            .collect();
        let mut hyper_analysis = vec![Conv::new(
            &format!("{name}.hyper_analysis.0"),
            c.latent_channels,
            c.hyper_channels,
            HYPER_KERNEL,
            1,
        )];
        for i in 0..c.hyper_down_layers {
            hyper_analysis.push(Conv::new(
                &format!("{name}.hyper_analysis.{}", i + 1),
                c.hyper_channels,
                c.hyper_channels,
                HYPER_KERNEL,
                2,
            ));
        }
        let hyper_synthesis = (0..c.hyper_down_layers)
            .map(|i| ConvUp::new(&format!("{name}.hyper_synthesis.{i}"), c.hyper_channels, c.hyper_channels, HYPER_KERNEL))
            .collect();
        let outputs = if c.scale_only { c.latent_channels } else { 2 * c.latent_channels };
        let hyper_out = Conv::new(&format!("{name}.hyper_synthesis.out"), c.hyper_channels, outputs, HYPER_KERNEL, 1);
        Ok(Self { config, analysis, synthesis, hyper_analysis, hyper_synthesis, hyper_out })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (conv, gdn) in &self.analysis {
            specs.extend(conv.specs());
            specs.extend(gdn.iter().flat_map(GdnLayer::specs));
        }
        for (up, igdn) in &self.synthesis {
            specs.extend(up.specs());
            specs.extend(igdn.iter().flat_map(GdnLayer::specs));
        }
        specs.extend(self.hyper_analysis.iter().flat_map(Conv::specs));
        specs.extend(self.hyper_synthesis.iter().flat_map(ConvUp::specs));
        specs.extend(self.hyper_out.specs());
        specs
    }

    fn check_input<F: Float>(&self, x: &Var<F>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let align = 1 << self.config.down_layers;
        if c != self.config.input_channels || h % align != 0 || w % align != 0 {
            return Err(TensorError::Shape(format!(
                "autoencoder input {:?} needs {} channels and sides divisible by {align}",
                x.shape(),
                self.config.input_channels
            ))
            .into());
        }
        Ok(())
    }

    /// Analysis transform `x → y`.
    pub fn encode<F: Float>(&self, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (conv, gdn) in &self.analysis {
            h = conv.forward(p, &h)?;
            if let Some(gdn) = gdn {
                h = gdn.forward(p, &h)?;
            }
        }
        Ok(h)
    }

    /// Synthesis transform `ŷ → x̂`.
    pub fn decode<F: Float>(&self, p: &Binding<F>, y_hat: &Var<F>) -> Result<Var<F>> {
        let mut h = y_hat.clone();
        for (up, igdn) in &self.synthesis {
            h = up.forward(p, &h)?;
            if let Some(igdn) = igdn {
                h = igdn.forward(p, &h)?;
            }
        }
        Ok(h)
    }

    pub fn hyper_encode<F: Float>(&self, p: &Binding<F>, y: &Var<F>) -> Result<Var<F>> {
        let (_, c, h, w) = y.dims4()?;
        let align = 1 << self.config.hyper_down_layers;
        if c != self.config.latent_channels || h % align != 0 || w % align != 0 {
            return Err(TensorError::Shape(format!(
                "latent {:?} needs {} channels and sides divisible by {align}",
                y.shape(),
                self.config.latent_channels
            ))
            .into());
        }
        let mut z = y.clone();
        let last = self.hyper_analysis.len() - 1;
        for (i, conv) in self.hyper_analysis.iter().enumerate() {
            z = conv.forward(p, &z)?;
            if i < last {
                z = z.relu();
            }
        }
        Ok(z)
    }

    /// `ẑ → (mu, b)` with `b = B_MIN + softplus(raw)`.
    pub fn hyper_decode<F: Float>(&self, p: &Binding<F>, z_hat: &Var<F>) -> Result<(Var<F>, Var<F>)> {
        let mut h = z_hat.clone();
        for up in &self.hyper_synthesis {
            h = up.forward(p, &h)?.relu();
        }
        let out = self.hyper_out.forward(p, &h)?;
        let m = self.config.latent_channels;
        let (mu, raw) = if self.config.scale_only {
            (Var::constant(bgop_tensor::Tensor::zeros(out.shape())), out)
        } else {
            (out.slice_channels(0, m)?, out.slice_channels(m, m)?)
        };
        Ok((mu, raw.softplus().add_scalar(F::from_f64(B_MIN))))
    }

    pub fn entropy_params<F: Float>(&self, p: &Binding<F>, z_hat: &Var<F>) -> Result<LaplaceParams<F>> {
        let (mu, b) = self.hyper_decode(p, z_hat)?;
        LaplaceParams::new(mu.value().clone(), b.value().clone())
    }

    /// Full coding pass: analysis, hyper analysis, quantization of both
    /// latents, rate estimation and synthesis.
    pub fn code<F: Float>(&self, p: &Binding<F>, x: &Var<F>, q: &mut Quantizer) -> Result<CodedLatents<F>> {
        let y = self.encode(p, x)?;
        let z = self.hyper_encode(p, &y)?;
        let z_hat = q.quantize(&z);
        let (mu, b) = self.hyper_decode(p, &z_hat)?;
        let y_hat = q.quantize(&y);
        let rate_main = laplace_rate(&y_hat, &mu, &b)?;
        let rate_hyper = unit_laplace_rate(&z_hat)?;
        let x_hat = self.decode(p, &y_hat)?;
        Ok(CodedLatents { y_hat, z_hat, x_hat, rate_main, rate_hyper })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use bgop_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(codec: &HyperpriorCodec) -> ParamStore<f32> {
        ParamStore::from_specs(&codec.specs(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn paper_scale_shapes() {
        for input_channels in [3, 4] {
            let codec = HyperpriorCodec::new("ae", AutoencoderConfig::new(input_channels, 96, 192)).unwrap();
            let params = store(&codec);
            let p = Binding::frozen(&params);
            let x = Var::constant(Tensor::<f32>::full(&[1, input_channels, 64, 64], 0.5));
            let y = codec.encode(&p, &x).unwrap();
            assert_eq!(y.shape(), &[1, 192, 4, 4]);
            let z = codec.hyper_encode(&p, &y).unwrap();
            assert_eq!(z.shape(), &[1, 96, 1, 1]);
            let (mu, b) = codec.hyper_decode(&p, &z).unwrap();
            assert_eq!(mu.shape(), &[1, 192, 4, 4]);
            assert!(b.value().data().iter().all(|&v| v as f64 >= B_MIN));
            assert_eq!(codec.decode(&p, &y).unwrap().shape(), &[1, input_channels, 64, 64]);
        }
    }

    #[test]
    fn rejects_misaligned_input() {
        let codec = HyperpriorCodec::new("ae", AutoencoderConfig::new(3, 8, 8)).unwrap();
        let params = store(&codec);
        let p = Binding::frozen(&params);
        let x = Var::constant(Tensor::<f32>::zeros(&[1, 3, 40, 64]));
        assert!(matches!(codec.encode(&p, &x), Err(Error::Tensor(_))));
        let y = Var::constant(Tensor::<f32>::zeros(&[1, 8, 2, 3]));
        assert!(codec.hyper_encode(&p, &y).is_err());
    }

    #[test]
    fn scale_only_has_zero_location() {
        let mut cfg = AutoencoderConfig::new(3, 8, 8);
        cfg.scale_only = true;
        let codec = HyperpriorCodec::new("ae", cfg).unwrap();
        let params = store(&codec);
        let p = Binding::frozen(&params);
        let z = Var::constant(Tensor::<f32>::ones(&[1, 8, 1, 1]));
        let (mu, b) = codec.hyper_decode(&p, &z).unwrap();
        assert_eq!(mu.value().max_abs(), 0.0);
        assert_eq!(b.shape(), &[1, 8, 4, 4]);
    }

    #[test]
    fn round_mode_latents_are_integers() {
        let codec = HyperpriorCodec::new("ae", AutoencoderConfig::new(3, 8, 8)).unwrap();
        let params = store(&codec);
        let p = Binding::frozen(&params);
        let x = Var::constant(Tensor::<f32>::from_fn(&[1, 3, 64, 64], |i| (i as f32 * 0.01).sin()));
        let coded = codec.code(&p, &x, &mut Quantizer::round()).unwrap();
        assert!(coded.y_hat.value().data().iter().all(|v| v.fract() == 0.0));
        assert!(coded.z_hat.value().data().iter().all(|v| v.fract() == 0.0));
        assert!(coded.rate_main.item() >= 0.0 && coded.rate_hyper.item() >= 0.0);
        let again = codec.decode(&p, &coded.y_hat).unwrap();
        assert_eq!(again.value(), coded.x_hat.value());
    }
}
