use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate-distortion terms of one group. Rates are in bits per coded pixel so
/// that `lambda` does not depend on resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lambda: f64,
    /// Mean squared error on `[0, 1]` intensities.
    pub distortion: f64,
    pub r_image: f64,
    pub r_flow: f64,
    pub r_residual: f64,
    pub loss: f64,
}

impl LossBreakdown {
    pub fn rate(&self) -> f64 {
        self.r_image + self.r_flow + self.r_residual
    }
}

/// `L = λ·D + R_image + R_flow + R_residual`.
pub fn rd_loss(distortion: f64, r_image: f64, r_flow: f64, r_residual: f64, lambda: f64) -> Result<LossBreakdown> {
    let terms = [distortion, r_image, r_flow, r_residual, lambda];
    if terms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::config(format!("rd terms must be finite and nonnegative, got {terms:?}")));
    }
    let loss = lambda * distortion + r_image + r_flow + r_residual;
    Ok(LossBreakdown { lambda, distortion, r_image, r_flow, r_residual, loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let b = rd_loss(0.01, 0.1, 0.2, 0.3, 10.0).unwrap();
        assert!((b.loss - 0.7).abs() < 1e-12);
        assert_eq!(rd_loss(0.0, 0.0, 0.0, 0.0, 10.0).unwrap().loss, 0.0);
        let lo = rd_loss(0.02, 0.1, 0.2, 0.3, 5.0).unwrap();
        let hi = rd_loss(0.02, 0.1, 0.2, 0.3, 10.0).unwrap();
        assert!((hi.loss - lo.loss - 5.0 * 0.02).abs() < 1e-12);
        assert!(rd_loss(-1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(rd_loss(0.0, f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_is_exact() {
        let b = rd_loss(0.0123, 0.456, 0.0789, 0.321, 512.0).unwrap();
        assert_eq!(b.loss, b.lambda * b.distortion + b.r_image + b.r_flow + b.r_residual);
    }
}
