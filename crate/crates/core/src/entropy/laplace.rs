use bgop_tensor::{Float, Tensor, Var};

use crate::error::{Error, Result};

/// Lower bound on the Laplace scale.
pub const B_MIN: f64 = 0.01;
/// Probability floor inside the logarithm of the rate.
pub const P_FLOOR: f64 = 1e-9;

/// Location and scale of one Laplace element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace {
    pub mu: f64,
    pub b: f64,
}

impl Laplace {
    pub const UNIT: Laplace = Laplace { mu: 0.0, b: 1.0 };

    pub fn new(mu: f64, b: f64) -> Self {
        Self { mu, b: b.max(B_MIN) }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let z = (t - self.mu) / self.b;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// Mass of the unit bin centred on `x`.
    pub fn bin_prob(&self, x: f64) -> f64 {
        bin(x - self.mu, self.b).0
    }
}

/// `(p, dp/dd, dp/db)` for the unit bin centred at offset `d` from the mode.
fn bin(d: f64, b: f64) -> (f64, f64, f64) {
    let u = d.abs();
    let p = if u >= 0.5 {
        0.5 * (-(u - 0.5) / b).exp() * -(-1.0 / b).exp_m1()
    } else {
        -0.5 * ((-(0.5 - d) / b).exp_m1() + (-(0.5 + d) / b).exp_m1())
    };
    let density = |t: f64| (-t.abs() / b).exp() / (2.0 * b);
    let (f_hi, f_lo) = (density(d + 0.5), density(d - 0.5));
    let dp_dd = f_hi - f_lo;
    let dp_db = -((d + 0.5) * f_hi - (d - 0.5) * f_lo) / b;
    (p, dp_dd, dp_db)
}

/// `F(k + 0.5) − F(k − 0.5)` under the given Laplace.
pub fn laplace_bin_prob(k: i64, params: Laplace) -> f64 {
    params.bin_prob(k as f64)
}

/// Bits of one element: `−log2 max(p, P_FLOOR)`.
pub fn element_bits(x: f64, params: Laplace) -> f64 {
    -params.bin_prob(x).max(P_FLOOR).log2()
}

/// Per-element Laplace parameters of a latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceParams<F: Float> {
    pub mu: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Float> LaplaceParams<F> {
    /// Validates alignment and finiteness and clamps `b` to [`B_MIN`].
    pub fn new(mu: Tensor<F>, b: Tensor<F>) -> Result<Self> {
        if mu.shape() != b.shape() {
            return Err(Error::config(format!("mu {:?} and b {:?} differ in shape", mu.shape(), b.shape())));
        }
        if !mu.all_finite() || !b.all_finite() {
            return Err(Error::config("non-finite Laplace parameters"));
        }
        let floor = F::from_f64(B_MIN);
        let b = b.map(|v| if v < floor { floor } else { v });
        Ok(Self { mu, b })
    }

    /// Unit Laplace for every element of `shape`.
    pub fn unit(shape: &[usize]) -> Self {
        Self { mu: Tensor::zeros(shape), b: Tensor::ones(shape) }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn element(&self, i: usize) -> Laplace {
        Laplace::new(self.mu.data()[i].as_f64(), self.b.data()[i].as_f64())
    }
}

/// Estimated rate in bits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct RateEstimate {
    pub bits: f64,
}

impl std::ops::Add for RateEstimate {
    type Output = RateEstimate;

    fn add(self, rhs: Self) -> Self {
        RateEstimate { bits: self.bits + rhs.bits }
    }
}

pub fn rate_bits<F: Float>(y_hat: &Tensor<F>, params: &LaplaceParams<F>) -> Result<RateEstimate> {
    if y_hat.shape() != params.mu.shape() {
        return Err(Error::config(format!(
            "latent {:?} and parameters {:?} differ in shape",
            y_hat.shape(),
            params.mu.shape()
        )));
    }
    let bits = y_hat.data().iter().enumerate().map(|(i, &y)| element_bits(y.as_f64(), params.element(i))).sum();
    Ok(RateEstimate { bits })
}

pub fn hyper_rate_bits<F: Float>(z_hat: &Tensor<F>) -> RateEstimate {
    RateEstimate { bits: z_hat.data().iter().map(|&z| element_bits(z.as_f64(), Laplace::UNIT)).sum() }
}

/// Differentiable total bits of `y` under per-element `(mu, b)`.
/// Gradients flow to all three inputs; `b` below [`B_MIN`] is clamped and
/// receives no gradient, as do elements whose mass falls under
/// [`P_FLOOR`].
pub fn laplace_rate<F: Float>(y: &Var<F>, mu: &Var<F>, b: &Var<F>) -> Result<Var<F>> {
    if y.shape() != mu.shape() || y.shape() != b.shape() {
        return Err(Error::config(format!(
            "rate over {:?} with parameters {:?} / {:?}",
            y.shape(),
            mu.shape(),
            b.shape()
        )));
    }
    let n = y.value().len();
    let mut total = 0.0;
    let mut dy = Vec::with_capacity(n);
    let mut db = Vec::with_capacity(n);
    let ln2 = std::f64::consts::LN_2;
    for i in 0..n {
        let raw_b = b.value().data()[i].as_f64();
        let clamped = raw_b < B_MIN;
        let scale = raw_b.max(B_MIN);
        let d = y.value().data()[i].as_f64() - mu.value().data()[i].as_f64();
        let (p, dp_dd, dp_db) = bin(d, scale);
        if p > P_FLOOR {
            total -= p.log2();
            let dbits_dp = -1.0 / (p * ln2);
            dy.push(dbits_dp * dp_dd);
            db.push(if clamped { 0.0 } else { dbits_dp * dp_db });
        } else {
            total -= P_FLOOR.log2();
            dy.push(0.0);
            db.push(0.0);
        }
    }
    let value = Tensor::scalar(F::from_f64(total));
    let shape = y.shape().to_vec();
    Ok(Var::from_op(value, &[y, mu, b], move || {
        Box::new(move |g: &Tensor<F>| {
            let g = g.data()[0].as_f64();
            let gy = Tensor::from_vec(&shape, dy.iter().map(|&v| F::from_f64(g * v)).collect()).expect("shape");
            let gmu = gy.map(|v| -v);
            let gb = Tensor::from_vec(&shape, db.iter().map(|&v| F::from_f64(g * v)).collect()).expect("shape");
            vec![Some(gy), Some(gmu), Some(gb)]
        })
    }))
}

/// Differentiable total bits of `z` under the unit Laplace.
pub fn unit_laplace_rate<F: Float>(z: &Var<F>) -> Result<Var<F>> {
    let mu = Var::constant(Tensor::zeros(z.shape()));
    let b = Var::constant(Tensor::ones(z.shape()));
    laplace_rate(z, &mu, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let p0 = laplace_bin_prob(0, Laplace::UNIT);
        assert!((p0 - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((p0 - 0.393469).abs() < 1e-6);
        let p1 = laplace_bin_prob(1, Laplace::UNIT);
        assert!((p1 - ((-0.5f64).exp() - (-1.5f64).exp()) / 2.0).abs() < 1e-15);
        assert!((p1 - 0.191700).abs() < 1e-6);
        assert!((element_bits(0.0, Laplace::UNIT) + p0.log2()).abs() < 1e-12);
        assert!((element_bits(0.0, Laplace::UNIT) - 1.345677).abs() < 1e-6);
        assert!((element_bits(1.0, Laplace::UNIT) + p1.log2()).abs() < 1e-12);
        assert!((element_bits(1.0, Laplace::UNIT) - 2.383076).abs() < 1e-6);
    }

    #[test]
    fn rate_is_additive_and_order_free() {
        let z = Tensor::from_vec(&[2], vec![0.0f64, 0.0]).unwrap();
        let two = hyper_rate_bits(&z).bits;
        assert!((two - 2.0 * element_bits(0.0, Laplace::UNIT)).abs() < 1e-12);
        let a = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.0f64, 1.0, -2.0]).unwrap();
        assert_eq!(hyper_rate_bits(&a).bits, hyper_rate_bits(&b).bits);
    }

    #[test]
    fn differentiable_rate_matches_plain_rate() {
        let y = Tensor::from_vec(&[1, 1, 1, 3], vec![0.3f64, -1.7, 4.0]).unwrap();
        let mu = Tensor::from_vec(&[1, 1, 1, 3], vec![0.1f64, -1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 1, 3], vec![0.5f64, 2.0, 0.005]).unwrap();
        let params = LaplaceParams::new(mu.clone(), b.clone()).unwrap();
        let plain = rate_bits(&y, &params).unwrap().bits;
        let var = laplace_rate(&Var::constant(y), &Var::constant(mu), &Var::constant(b)).unwrap();
        assert!((var.item() - plain).abs() < 1e-12);
    }

    #[test]
    fn floor_caps_outliers() {
        let bits = element_bits(1e6, Laplace::new(0.0, 0.01));
        assert!((bits - -P_FLOOR.log2()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_about_zero(k in 0i64..50, b in 0.01f64..20.0) {
            let l = Laplace::new(0.0, b);
            prop_assert_eq!(laplace_bin_prob(k, l), laplace_bin_prob(-k, l));
        }

        #[test]
        fn normalizes(mu in -5.0f64..5.0, b in 0.01f64..5.0) {
            let l = Laplace::new(mu, b);
            let k = (20.0 * b + mu.abs()).ceil() as i64 + 1;
            let total: f64 = (-k..=k).map(|i| laplace_bin_prob(i, l)).sum();
            prop_assert!((1.0 - total).abs() < 1e-8);
        }

        #[test]
        fn mode_rate_nondecreasing_in_scale(mu in -3.0f64..3.0, b1 in 0.01f64..10.0, db in 0.0f64..10.0) {
            let lo = element_bits(mu, Laplace::new(mu, b1));
            let hi = element_bits(mu, Laplace::new(mu, b1 + db));
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn bin_mass_in_unit_interval(x in -50.0f64..50.0, mu in -5.0f64..5.0, b in 0.01f64..20.0) {
            let p = Laplace::new(mu, b).bin_prob(x);
            prop_assert!(p >= 0.0 && p <= 1.0);
            prop_assert!(element_bits(x, Laplace::new(mu, b)) >= 0.0);
        }
    }
}
