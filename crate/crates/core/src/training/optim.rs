use std::collections::BTreeMap;

use bgop_tensor::{Float, Tensor};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Float> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor<F>, Tensor<F>)>,
}

impl<F: Float> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to the parameters named in `grads`.
    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &BTreeMap<String, Tensor<F>>) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Training(format!("non-finite gradient for {name}")));
            }
            let param = store.get_mut(name).ok_or_else(|| Error::Training(format!("unknown parameter {name}")))?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((p, m), v), g) in
                param.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                let gf = g.as_f64();
                let mf = b1 * m.as_f64() + (1.0 - b1) * gf;
                let vf = b2 * v.as_f64() + (1.0 - b2) * gf * gf;
                *m = F::from_f64(mf);
                *v = F::from_f64(vf);
                let step = self.learning_rate * (mf / c1) / ((vf / c2).sqrt() + self.eps);
                *p = F::from_f64(p.as_f64() - step);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut store = ParamStore::<f64>::default();
        store.insert("w", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(0.1);
        let grads = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap())]);
        adam.update(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::default();
        store.insert("w", Tensor::from_vec(&[1], vec![5.0]).unwrap());
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let w = store.get("w").unwrap().data()[0];
            let grads = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[1], vec![2.0 * (w - 2.0)]).unwrap())]);
            adam.update(&mut store, &grads).unwrap();
        }
        assert!((store.get("w").unwrap().data()[0] - 2.0).abs() < 1e-2);
        let bad = BTreeMap::from([("w".to_string(), Tensor::from_vec(&[1], vec![f64::NAN]).unwrap())]);
        assert!(adam.update(&mut store, &bad).is_err());
    }
}
