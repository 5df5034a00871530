use crate::error::{Result, TensorError};
use crate::scalar::Float;
use crate::tensor::{ensure_same_shape, Tensor};
use crate::var::Var;

impl<F: Float> Var<F> {
    pub fn add(&self, other: &Var<F>) -> Result<Var<F>> {
        let value = self.value().zip_map(other.value(), |a, b| a + b)?;
        Ok(Var::from_op(value, &[self, other], || {
            Box::new(|g: &Tensor<F>| vec![Some(g.clone()), Some(g.clone())])
        }))
    }

    pub fn sub(&self, other: &Var<F>) -> Result<Var<F>> {
        let value = self.value().zip_map(other.value(), |a, b| a - b)?;
        Ok(Var::from_op(value, &[self, other], || {
            Box::new(|g: &Tensor<F>| vec![Some(g.clone()), Some(g.map(|v| -v))])
        }))
    }

    pub fn mul(&self, other: &Var<F>) -> Result<Var<F>> {
        let value = self.value().zip_map(other.value(), |a, b| a * b)?;
        Ok(Var::from_op(value, &[self, other], || {
            let a = self.value().clone();
            let b = other.value().clone();
            Box::new(move |g: &Tensor<F>| {
                vec![
                    Some(g.zip_map(&b, |g, b| g * b).expect("shape")),
                    Some(g.zip_map(&a, |g, a| g * a).expect("shape")),
                ]
            })
        }))
    }

    pub fn scale(&self, s: F) -> Var<F> {
        let value = self.value().map(|v| v * s);
        Var::from_op(value, &[self], || Box::new(move |g: &Tensor<F>| vec![Some(g.map(|v| v * s))]))
    }

    pub fn add_scalar(&self, s: F) -> Var<F> {
        let value = self.value().map(|v| v + s);
        Var::from_op(value, &[self], || Box::new(|g: &Tensor<F>| vec![Some(g.clone())]))
    }

    pub fn relu(&self) -> Var<F> {
        self.leaky_relu(F::zero())
    }

    pub fn leaky_relu(&self, slope: F) -> Var<F> {
        let value = self.value().map(|v| if v > F::zero() { v } else { v * slope });
        Var::from_op(value, &[self], || {
            let x = self.value().clone();
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&x, |g, x| if x > F::zero() { g } else { g * slope }).expect("shape"))]
            })
        })
    }

    pub fn sigmoid(&self) -> Var<F> {
        let value = self.value().map(sigmoid);
        let out = value.clone();
        Var::from_op(value, &[self], move || {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&out, |g, s| g * s * (F::one() - s)).expect("shape"))]
            })
        })
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&self) -> Var<F> {
        let value = self.value().map(softplus);
        Var::from_op(value, &[self], || {
            let x = self.value().clone();
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&x, |g, x| g * sigmoid(x)).expect("shape"))]
            })
        })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Var<F> {
        let value = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(value, &[self], move || {
            Box::new(move |g: &Tensor<F>| vec![Some(Tensor::full(&shape, g.data()[0]))])
        })
    }

    pub fn mean(&self) -> Var<F> {
        let n = F::from_f64(self.value().len() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Mean squared difference, as a one-element tensor.
    pub fn mse(&self, target: &Var<F>) -> Result<Var<F>> {
        ensure_same_shape(self.value(), target.value())?;
        let n = self.value().len();
        let diff = self.value().zip_map(target.value(), |a, b| a - b)?;
        let acc: f64 = diff.data().iter().map(|d| d.as_f64() * d.as_f64()).sum();
        let value = Tensor::scalar(F::from_f64(acc / n as f64));
        Ok(Var::from_op(value, &[self, target], move || {
            let k = F::from_f64(2.0 / n as f64);
            Box::new(move |g: &Tensor<F>| {
                let s = g.data()[0] * k;
                let ga = diff.map(|d| d * s);
                let gb = ga.map(|v| -v);
                vec![Some(ga), Some(gb)]
            })
        }))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Var<F>]) -> Result<Var<F>> {
        let first = parts.first().ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
        let (b, _, h, w) = first.dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pb, pc, ph, pw) = p.dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(TensorError::Shape(format!(
                    "concat: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (p, &c) in parts.iter().zip(&channels) {
                let src = p.value().data();
                out.extend_from_slice(&src[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let value = Tensor::from_vec(&[b, total, h, w], out)?;
        Ok(Var::from_op(value, parts, move || {
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let mut offset = 0;
                channels
                    .iter()
                    .map(|&c| {
                        let mut part = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            let start = (bi * total + offset) * plane;
                            part.extend_from_slice(&gd[start..start + c * plane]);
                        }
                        offset += c;
                        Some(Tensor::from_vec(&[b, c, h, w], part).expect("shape"))
                    })
                    .collect()
            })
        }))
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        if start + len > c || len == 0 {
            return Err(TensorError::Shape(format!(
                "channel slice {start}..{} of {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let src = self.value().data();
        let mut out = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let s = (bi * c + start) * plane;
            out.extend_from_slice(&src[s..s + len * plane]);
        }
        let value = Tensor::from_vec(&[b, len, h, w], out)?;
        Ok(Var::from_op(value, &[self], move || {
            Box::new(move |g: &Tensor<F>| {
                let mut full = vec![F::zero(); b * c * plane];
                let gd = g.data();
                for bi in 0..b {
                    let s = (bi * c + start) * plane;
                    full[s..s + len * plane].copy_from_slice(&gd[bi * len * plane..(bi + 1) * len * plane]);
                }
                vec![Some(Tensor::from_vec(&[b, c, h, w], full).expect("shape"))]
            })
        }))
    }

    /// Per-pixel convex blend `mask · a + (1 − mask) · b`; `mask` has one
    /// channel and is broadcast over the channels of `a` and `b`.
    pub fn blend(a: &Var<F>, b: &Var<F>, mask: &Var<F>) -> Result<Var<F>> {
        ensure_same_shape(a.value(), b.value())?;
        let (n, c, h, w) = a.dims4()?;
        let (mn, mc, mh, mw) = mask.dims4()?;
        if (mn, mc, mh, mw) != (n, 1, h, w) {
            return Err(TensorError::Shape(format!(
                "blend mask {:?} does not match frames {:?}",
                mask.shape(),
                a.shape()
            )));
        }
        let plane = h * w;
        let (ad, bd, md) = (a.value().data(), b.value().data(), mask.value().data());
        let mut out = vec![F::zero(); ad.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let mbase = ni * plane;
                for p in 0..plane {
                    let m = md[mbase + p];
                    out[base + p] = m * ad[base + p] + (F::one() - m) * bd[base + p];
                }
            }
        }
        let value = Tensor::from_vec(a.shape(), out)?;
        Ok(Var::from_op(value, &[a, b, mask], || {
            let (av, bv, mv) = (a.value().clone(), b.value().clone(), mask.value().clone());
            Box::new(move |g: &Tensor<F>| {
                let (ad, bd, md, gd) = (av.data(), bv.data(), mv.data(), g.data());
                let mut ga = vec![F::zero(); ad.len()];
                let mut gb = vec![F::zero(); ad.len()];
                let mut gm = vec![F::zero(); md.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        let mbase = ni * plane;
                        for p in 0..plane {
                            let m = md[mbase + p];
                            let gv = gd[base + p];
                            ga[base + p] = gv * m;
                            gb[base + p] = gv * (F::one() - m);
                            gm[mbase + p] += gv * (ad[base + p] - bd[base + p]);
                        }
                    }
                }
                vec![
                    Some(Tensor::from_vec(av.shape(), ga).expect("shape")),
                    Some(Tensor::from_vec(av.shape(), gb).expect("shape")),
                    Some(Tensor::from_vec(mv.shape(), gm).expect("shape")),
                ]
            })
        }))
    }
}

#[inline]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<F: Float>(x: F) -> F {
    // log1p(exp(-|x|)) + max(x, 0)
    (-x.abs()).exp().ln_1p() + x.max(F::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn mul_backward_swaps_operands() {
        let a = Var::leaf(t(&[2], &[1.0, 2.0]));
        let b = Var::leaf(t(&[2], &[3.0, 5.0]));
        let y = a.mul(&b).unwrap().sum();
        let grads = y.backward().unwrap();
        assert_eq!(grads.get(&a).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(grads.get(&b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let a = Var::leaf(t(&[1], &[3.0]));
        let y = a.add(&a).unwrap().mul(&a).unwrap().sum();
        // y = 2a², dy/da = 4a
        let grads = y.backward().unwrap();
        assert_eq!(grads.get(&a).unwrap().data(), &[12.0]);
    }

    #[test]
    fn constants_build_no_graph() {
        let a = Var::constant(t(&[1], &[1.0]));
        let y = a.scale(2.0).sigmoid();
        assert!(!y.requires_grad());
        assert!(y.backward().unwrap().is_empty());
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let a = Var::leaf(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
        let b = Var::leaf(Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f64));
        let cat = Var::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 3, 2, 2]);
        assert_eq!(cat.slice_channels(0, 1).unwrap().value(), a.value());
        assert_eq!(cat.slice_channels(1, 2).unwrap().value(), b.value());
        let grads = cat.slice_channels(1, 2).unwrap().sum().backward().unwrap();
        assert_eq!(grads.get(&a).unwrap().sum(), 0.0);
        assert_eq!(grads.get(&b).unwrap().sum(), 16.0);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_definition() {
        let a = Var::leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let b = Var::constant(t(&[3], &[1.0, 0.0, 0.0]));
        let m = a.mse(&b).unwrap();
        assert!((m.item() - 13.0 / 3.0).abs() < 1e-12);
        let g = m.backward().unwrap();
        let ga = g.get(&a).unwrap().data().to_vec();
        assert!((ga[1] - 4.0 / 3.0).abs() < 1e-12 && (ga[2] - 2.0).abs() < 1e-12);
    }
}
