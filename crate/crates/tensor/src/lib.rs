//! Reverse-mode automatic differentiation over dense `f32`/`f64` tensors,
//! with the layer kernels needed by learned image and video codecs:
//! strided and transposed convolution, GDN/IGDN, bilinear backward warping,
//! pyramid resampling and per-pixel blending.
//!
//! ```
//! use bgop_tensor::{Tensor, Var};
//!
//! let x = Var::leaf(Tensor::from_vec(&[2], vec![1.0f64, -2.0]).unwrap());
//! let y = x.mul(&x).unwrap().sum();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0]);
//! ```

mod error;
pub mod ops;
mod scalar;
mod tensor;
mod var;

pub use error::{Result, TensorError};
pub use ops::ConvGeometry;
pub use scalar::Float;
pub use tensor::Tensor;
pub use var::{BackwardFn, Gradients, Var};

/// Logistic function, overflow-free for large `|x|`.
pub fn sigmoid<F: Float>(x: F) -> F {
    ops::sigmoid(x)
}

/// `log(1 + exp(x))`, overflow-free for large `|x|`.
pub fn softplus<F: Float>(x: F) -> F {
    ops::softplus(x)
}
