//! Generalized divisive normalization.
//!
//! For every spatial location, with `n_i = beta_i + Σ_j gamma_ij · x_j²`:
//!
//! ```text
//! forward  y_i = x_i · n_i^(-1/2)
//! inverse  y_i = x_i · n_i^(+1/2)
//! ```
//!
//! Both forms share one kernel parameterized by the exponent `p = ∓1/2`:
//!
//! ```text
//! ∂L/∂x_k     = g_k n_k^p + 2 x_k Σ_i gamma_ik t_i
//! ∂L/∂beta_i  = Σ_loc t_i
//! ∂L/∂gamma_ij = Σ_loc t_i x_j²
//! ```
//!
//! where `t_i = g_i x_i p n_i^(p-1)`.

use crate::error::{Result, TensorError};
use crate::scalar::{matmul, matmul_at_acc, matmul_bt_acc, Float};
use crate::tensor::Tensor;
use crate::var::Var;

impl<F: Float> Var<F> {
    /// GDN (`inverse = false`) or IGDN (`inverse = true`). `beta` has shape
    /// `[C]`, `gamma` has shape `[C, C]`; both must be positive (enforced by
    /// the caller's reparameterization).
    pub fn gdn(&self, beta: &Var<F>, gamma: &Var<F>, inverse: bool) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        if beta.shape() != [c] || gamma.shape() != [c, c] {
            return Err(TensorError::Shape(format!(
                "gdn params beta {:?} / gamma {:?} do not match {c} channels",
                beta.shape(),
                gamma.shape()
            )));
        }
        let plane = h * w;
        let p = if inverse { F::from_f64(0.5) } else { F::from_f64(-0.5) };
        let xd = self.value().data();
        let bd = beta.value().data();
        let gd = gamma.value().data();

        let sq: Vec<F> = xd.iter().map(|&v| v * v).collect();
        let mut norm = vec![F::zero(); xd.len()];
        for bi in 0..b {
            let range = bi * c * plane..(bi + 1) * c * plane;
            matmul(c, c, plane, gd, &sq[range.clone()], &mut norm[range.clone()]);
            for ci in 0..c {
                let s = bi * c * plane + ci * plane;
                norm[s..s + plane].iter_mut().for_each(|v| *v += bd[ci]);
            }
        }
        let out: Vec<F> = xd
            .iter()
            .zip(&norm)
            .map(|(&x, &n)| if inverse { x * n.sqrt() } else { x / n.sqrt() })
            .collect();
        let value = Tensor::from_vec(self.shape(), out)?;

        Ok(Var::from_op(value, &[self, beta, gamma], || {
            let x = self.value().clone();
            let gamma_v = gamma.value().clone();
            Box::new(move |g: &Tensor<F>| {
                let xd = x.data();
                let gdd = g.data();
                let gam = gamma_v.data();
                let mut gx = vec![F::zero(); xd.len()];
                let mut gbeta = vec![F::zero(); c];
                let mut ggamma = vec![F::zero(); c * c];
                let mut t = vec![F::zero(); c * plane];
                let mut back = vec![F::zero(); c * plane];
                for bi in 0..b {
                    let base = bi * c * plane;
                    for i in 0..c * plane {
                        let (xv, nv, gv) = (xd[base + i], norm[base + i], gdd[base + i]);
                        let np = nv.powf(p);
                        t[i] = gv * xv * p * np / nv;
                        gx[base + i] = gv * np;
                    }
                    for ci in 0..c {
                        gbeta[ci] += t[ci * plane..(ci + 1) * plane].iter().copied().sum::<F>();
                    }
                    // ggamma(c×c) += t(c×plane) · (x²)ᵀ
                    matmul_bt_acc(c, plane, c, &t, &sq[base..base + c * plane], &mut ggamma);
                    // back(c×plane) = gammaᵀ · t
                    back.fill(F::zero());
                    matmul_at_acc(c, c, plane, gam, &t, &mut back);
                    let two = F::from_f64(2.0);
                    for i in 0..c * plane {
                        gx[base + i] += two * xd[base + i] * back[i];
                    }
                }
                vec![
                    Some(Tensor::from_vec(x.shape(), gx).expect("shape")),
                    Some(Tensor::from_vec(&[c], gbeta).expect("shape")),
                    Some(Tensor::from_vec(&[c, c], ggamma).expect("shape")),
                ]
            })
        }))
    }
}
