use bgop_tensor::{ConvGeometry, Float, Tensor, Var};

use super::params::{Binding, Init, ParamSpec};
use crate::error::{Error, Result};

/// Lower bound added after the softplus reparameterization of GDN
/// parameters.
pub const GDN_PARAM_FLOOR: f64 = 1e-6;

/// Inverse of softplus: the raw value whose softplus is `v` (`v > 0`).
pub fn softplus_inverse(v: f64) -> f64 {
    v + (-(-v).exp_m1()).ln()
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: String,
    bias: String,
    geo: ConvGeometry,
    in_channels: usize,
    out_channels: usize,
    init_scale: f64,
}

impl Conv {
    /// Convolution with "same"-style padding (`kernel / 2`).
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            geo: ConvGeometry::new(kernel, stride, kernel / 2),
            in_channels,
            out_channels,
            init_scale: 1.0,
        }
    }

    /// Multiplies the default init range; `0.0` starts from all zeros.
    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.init_scale = scale;
        self
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let k = self.geo.kernel;
        let bound = self.init_scale / ((self.in_channels * k * k) as f64).sqrt();
        let init = if bound == 0.0 { Init::Constant(0.0) } else { Init::Uniform(bound) };
        vec![
            ParamSpec::new(&self.weight, &[self.out_channels, self.in_channels, k, k], init.clone()),
            ParamSpec::new(&self.bias, &[self.out_channels], init),
        ]
    }

    pub fn forward<F: Float>(&self, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
        let w = p.get(&self.weight)?;
        let b = p.get(&self.bias)?;
        Ok(x.conv2d(&w, Some(&b), self.geo)?)
    }
}

/// Stride-2 transposed convolution that exactly doubles spatial extent.
#[derive(Debug, Clone)]
pub struct ConvUp {
    weight: String,
    bias: String,
    geo: ConvGeometry,
    in_channels: usize,
    out_channels: usize,
}

impl ConvUp {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            geo: ConvGeometry::new(kernel, 2, kernel / 2),
            in_channels,
            out_channels,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let k = self.geo.kernel;
        // each output pixel sees roughly a quarter of the kernel taps
        let fan_in = (self.in_channels * k * k) as f64 / 4.0;
        let bound = 1.0 / fan_in.sqrt();
        vec![
            ParamSpec::new(&self.weight, &[self.in_channels, self.out_channels, k, k], Init::Uniform(bound)),
            ParamSpec::new(&self.bias, &[self.out_channels], Init::Uniform(bound)),
        ]
    }

    pub fn forward<F: Float>(&self, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
        let w = p.get(&self.weight)?;
        let b = p.get(&self.bias)?;
        Ok(x.conv_transpose2d(&w, Some(&b), self.geo, 1)?)
    }
}

/// Effective (constrained) GDN parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnParams<F: Float> {
    pub beta: Tensor<F>,
    pub gamma: Tensor<F>,
}

impl<F: Float> GdnParams<F> {
    pub fn new(beta: Tensor<F>, gamma: Tensor<F>) -> Result<Self> {
        let c = beta.len();
        if beta.shape() != [c] || gamma.shape() != [c, c] {
            return Err(Error::config(format!(
                "gdn beta {:?} / gamma {:?} are not C and C×C",
                beta.shape(),
                gamma.shape()
            )));
        }
        if beta.data().iter().any(|&b| !(b > F::zero())) {
            return Err(Error::config("gdn beta must be positive"));
        }
        if gamma.data().iter().any(|&g| !(g >= F::zero())) {
            return Err(Error::config("gdn gamma must be nonnegative"));
        }
        Ok(Self { beta, gamma })
    }

    pub fn channels(&self) -> usize {
        self.beta.len()
    }
}

/// Applies GDN (`inverse = false`) or IGDN (`inverse = true`) with fixed
/// parameters.
pub fn gdn<F: Float>(x: &Tensor<F>, params: &GdnParams<F>, inverse: bool) -> Result<Tensor<F>> {
    let (_, c, _, _) = x.dims4()?;
    if c != params.channels() {
        return Err(Error::config(format!("gdn over {c} channels with {} parameters", params.channels())));
    }
    let y = Var::constant(x.clone()).gdn(
        &Var::constant(params.beta.clone()),
        &Var::constant(params.gamma.clone()),
        inverse,
    )?;
    Ok(y.value().clone())
}

/// Trainable GDN/IGDN layer. Stores unconstrained values; the effective
/// parameters are `floor + softplus(raw)`.
#[derive(Debug, Clone)]
pub struct GdnLayer {
    beta: String,
    gamma: String,
    channels: usize,
    inverse: bool,
}

impl GdnLayer {
    pub fn new(name: &str, channels: usize, inverse: bool) -> Self {
        Self { beta: format!("{name}.beta"), gamma: format!("{name}.gamma"), channels, inverse }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let raw = |v: f64| softplus_inverse(v - GDN_PARAM_FLOOR);
        vec![
            ParamSpec::new(&self.beta, &[self.channels], Init::Constant(raw(1.0))),
            ParamSpec::new(
                &self.gamma,
                &[self.channels, self.channels],
                Init::Diagonal { diag: raw(0.1), off: raw(1e-3) },
            ),
        ]
    }

    fn effective<F: Float>(&self, p: &Binding<F>) -> Result<(Var<F>, Var<F>)> {
        let floor = F::from_f64(GDN_PARAM_FLOOR);
        let beta = p.get(&self.beta)?.softplus().add_scalar(floor);
        let gamma = p.get(&self.gamma)?.softplus().add_scalar(floor);
        Ok((beta, gamma))
    }

    /// Current effective parameters.
    pub fn params<F: Float>(&self, p: &Binding<F>) -> Result<GdnParams<F>> {
        let (beta, gamma) = self.effective(p)?;
        GdnParams::new(beta.value().clone(), gamma.value().clone())
    }

    pub fn forward<F: Float>(&self, p: &Binding<F>, x: &Var<F>) -> Result<Var<F>> {
        let (beta, gamma) = self.effective(p)?;
        Ok(x.gdn(&beta, &gamma, self.inverse)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gdn_closed_forms() {
        let unit = GdnParams::new(Tensor::ones(&[1]), Tensor::ones(&[1, 1])).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f64]).unwrap();
        let y = gdn(&x, &unit, false).unwrap();
        assert!((y.data()[0] - 0.894427).abs() < 1e-6);

        let identity = GdnParams::new(Tensor::ones(&[3]), Tensor::zeros(&[3, 3])).unwrap();
        let x = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64 - 5.0);
        assert_eq!(gdn(&x, &identity, false).unwrap(), x);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(GdnParams::new(Tensor::<f64>::zeros(&[2]), Tensor::zeros(&[2, 2])).is_err());
        assert!(GdnParams::new(Tensor::<f64>::ones(&[2]), Tensor::full(&[2, 2], -0.1)).is_err());
        let p = GdnParams::new(Tensor::<f64>::ones(&[2]), Tensor::zeros(&[2, 2])).unwrap();
        assert!(gdn(&Tensor::zeros(&[1, 3, 1, 1]), &p, false).is_err());
    }

    #[test]
    fn reparameterized_init_hits_targets() {
        let layer = GdnLayer::new("g", 4, false);
        let store = ParamStore::<f64>::from_specs(&layer.specs(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let params = layer.params(&Binding::frozen(&store)).unwrap();
        for &b in params.beta.data() {
            assert!((b - 1.0).abs() < 1e-12);
        }
        assert!((params.gamma.data()[0] - 0.1).abs() < 1e-12);
        assert!((params.gamma.data()[1] - 1e-3).abs() < 1e-12);
    }

    proptest! {
        // With gamma = 0 the normalizer depends only on beta, so IGDN undoes
        // GDN exactly up to rounding.
        #[test]
        fn forward_then_inverse_with_zero_gamma(
            xs in prop::collection::vec(-3.0f64..3.0, 12),
            betas in prop::collection::vec(0.05f64..4.0, 3),
        ) {
            let p = GdnParams::new(Tensor::from_vec(&[3], betas).unwrap(), Tensor::zeros(&[3, 3])).unwrap();
            let x = Tensor::from_vec(&[1, 3, 2, 2], xs).unwrap();
            let back = gdn(&gdn(&x, &p, false).unwrap(), &p, true).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn forward_then_inverse_is_not_identity_with_coupling() {
        // n depends on the input, and IGDN sees the normalized value
        let p = GdnParams::new(Tensor::ones(&[1]), Tensor::ones(&[1, 1])).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f64]).unwrap();
        let back = gdn(&gdn(&x, &p, false).unwrap(), &p, true).unwrap();
        assert!((back.data()[0] - 2.0 / 5f64.sqrt() * 1.8f64.sqrt()).abs() < 1e-12);
    }
}
