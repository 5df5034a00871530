//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Weights use the usual layouts: `out × in × kh × kw` for convolution and
//! `in × out × kh × kw` for transposed convolution. Padding is zero padding.

use crate::error::{Result, TensorError};
use crate::scalar::{matmul, matmul_at_acc, matmul_bt_acc, Float};
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output extent of a forward convolution, if the window fits.
    pub fn conv_out(&self, extent: usize) -> Option<usize> {
        let padded = extent + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution with `output_pad` extra rows.
    pub fn transpose_out(&self, extent: usize, output_pad: usize) -> Option<usize> {
        let full = (extent.checked_sub(1)?) * self.stride + self.kernel + output_pad;
        full.checked_sub(2 * self.pad)
    }
}

/// Expands one image (`c × h × w`) into a `(c·k·k) × (oh·ow)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Float>(
    src: &[F],
    c: usize,
    h: usize,
    w: usize,
    geo: ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [F],
) {
    let k = geo.kernel;
    let n = oh * ow;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if geo.stride == 1 {
                        // contiguous run with zero fringes
                        let off = kx as isize - geo.pad as isize;
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *d = if ix >= 0 && ix < w as isize { srow[ix as usize] } else { F::zero() };
                        }
                    } else {
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                            *d = if ix >= 0 && ix < w as isize { srow[ix as usize] } else { F::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Float>(
    cols: &[F],
    c: usize,
    h: usize,
    w: usize,
    geo: ConvGeometry,
    oh: usize,
    ow: usize,
    dst: &mut [F],
) {
    let k = geo.kernel;
    let n = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<F: Float>(bias: Option<&Var<F>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::Shape(format!(
                "bias {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<F: Float>(out: &mut [F], bias: Option<&Var<F>>, batch: usize, channels: usize, plane: usize) {
    if let Some(b) = bias {
        let bd = b.value().data();
        for bi in 0..batch {
            for (ci, &bv) in bd.iter().enumerate() {
                let s = (bi * channels + ci) * plane;
                out[s..s + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn bias_grad<F: Float>(g: &[F], batch: usize, channels: usize, plane: usize) -> Tensor<F> {
    let mut gb = vec![F::zero(); channels];
    for bi in 0..batch {
        for (ci, acc) in gb.iter_mut().enumerate() {
            let s = (bi * channels + ci) * plane;
            *acc += g[s..s + plane].iter().copied().sum::<F>();
        }
    }
    Tensor::from_vec(&[channels], gb).expect("shape")
}

impl<F: Float> Var<F> {
    /// Forward convolution of a rank-4 input.
    pub fn conv2d(&self, weight: &Var<F>, bias: Option<&Var<F>>, geo: ConvGeometry) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        let (co, ci, kh, kw) = weight.dims4()?;
        if ci != c || kh != geo.kernel || kw != geo.kernel {
            return Err(TensorError::Shape(format!(
                "conv2d weight {:?} incompatible with input {:?} / kernel {}",
                weight.shape(),
                self.shape(),
                geo.kernel
            )));
        }
        check_bias(bias, co)?;
        let (oh, ow) = match (geo.conv_out(h), geo.conv_out(w)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(TensorError::Shape(format!(
                    "conv2d window {} does not fit {h}×{w}",
                    geo.kernel
                )))
            }
        };
        let kk = c * geo.kernel * geo.kernel;
        let n = oh * ow;
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut out = vec![F::zero(); b * co * n];
        let mut cols = vec![F::zero(); kk * n];
        for bi in 0..b {
            im2col(&xd[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, geo, oh, ow, &mut cols);
            matmul(co, kk, n, wd, &cols, &mut out[bi * co * n..(bi + 1) * co * n]);
        }
        add_bias(&mut out, bias, b, co, n);
        let value = Tensor::from_vec(&[b, co, oh, ow], out)?;

        let mut parents = vec![self, weight];
        if let Some(bv) = bias {
            parents.push(bv);
        }
        let has_bias = bias.is_some();
        Ok(Var::from_op(value, &parents, || {
            let x = self.value().clone();
            let wt = weight.value().clone();
            let (need_x, need_w) = (self.requires_grad(), weight.requires_grad());
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let xd = x.data();
                let wd = wt.data();
                let mut gx = need_x.then(|| vec![F::zero(); xd.len()]);
                let mut gw = need_w.then(|| vec![F::zero(); wd.len()]);
                let mut cols = vec![F::zero(); kk * n];
                for bi in 0..b {
                    let gb = &gd[bi * co * n..(bi + 1) * co * n];
                    if let Some(gw) = gw.as_mut() {
                        im2col(&xd[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, geo, oh, ow, &mut cols);
                        // gw(co×kk) += g(co×n) · colsᵀ
                        matmul_bt_acc(co, n, kk, gb, &cols, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        // dcols(kk×n) = wᵀ · g
                        cols.fill(F::zero());
                        matmul_at_acc(kk, co, n, wd, gb, &mut cols);
                        col2im(&cols, c, h, w, geo, oh, ow, &mut gx[bi * c * h * w..(bi + 1) * c * h * w]);
                    }
                }
                let mut grads = vec![
                    gx.map(|v| Tensor::from_vec(x.shape(), v).expect("shape")),
                    gw.map(|v| Tensor::from_vec(wt.shape(), v).expect("shape")),
                ];
                if has_bias {
                    grads.push(Some(bias_grad(gd, b, co, n)));
                }
                grads
            })
        }))
    }

    /// Transposed convolution; output extent is
    /// `(in − 1)·stride − 2·pad + kernel + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<F>,
        bias: Option<&Var<F>>,
        geo: ConvGeometry,
        output_pad: usize,
    ) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        let (ci, co, kh, kw) = weight.dims4()?;
        if ci != c || kh != geo.kernel || kw != geo.kernel || output_pad >= geo.stride.max(1) {
            return Err(TensorError::Shape(format!(
                "conv_transpose2d weight {:?} incompatible with input {:?}",
                weight.shape(),
                self.shape()
            )));
        }
        check_bias(bias, co)?;
        let (oh, ow) = match (geo.transpose_out(h, output_pad), geo.transpose_out(w, output_pad)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => return Err(TensorError::Shape(format!("conv_transpose2d cannot expand {h}×{w}"))),
        };
        let kk = co * geo.kernel * geo.kernel;
        let n = h * w;
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut out = vec![F::zero(); b * co * oh * ow];
        let mut cols = vec![F::zero(); kk * n];
        for bi in 0..b {
            // cols(kk×n) = wᵀ(kk×c) · x(c×n), scattered onto the output grid
            cols.fill(F::zero());
            matmul_at_acc(kk, c, n, wd, &xd[bi * c * n..(bi + 1) * c * n], &mut cols);
            col2im(&cols, co, oh, ow, geo, h, w, &mut out[bi * co * oh * ow..(bi + 1) * co * oh * ow]);
        }
        add_bias(&mut out, bias, b, co, oh * ow);
        let value = Tensor::from_vec(&[b, co, oh, ow], out)?;

        let mut parents = vec![self, weight];
        if let Some(bv) = bias {
            parents.push(bv);
        }
        let has_bias = bias.is_some();
        Ok(Var::from_op(value, &parents, || {
            let x = self.value().clone();
            let wt = weight.value().clone();
            let (need_x, need_w) = (self.requires_grad(), weight.requires_grad());
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let xd = x.data();
                let wd = wt.data();
                let mut gx = need_x.then(|| vec![F::zero(); xd.len()]);
                let mut gw = need_w.then(|| vec![F::zero(); wd.len()]);
                let mut cols = vec![F::zero(); kk * n];
                for bi in 0..b {
                    let gimg = &gd[bi * co * oh * ow..(bi + 1) * co * oh * ow];
                    im2col(gimg, co, oh, ow, geo, h, w, &mut cols);
                    let xb = &xd[bi * c * n..(bi + 1) * c * n];
                    if let Some(gx) = gx.as_mut() {
                        // gx(c×n) = w(c×kk) · cols
                        matmul(c, kk, n, wd, &cols, &mut gx[bi * c * n..(bi + 1) * c * n]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        // gw(c×kk) += x(c×n) · colsᵀ
                        matmul_bt_acc(c, n, kk, xb, &cols, gw);
                    }
                }
                let mut grads = vec![
                    gx.map(|v| Tensor::from_vec(x.shape(), v).expect("shape")),
                    gw.map(|v| Tensor::from_vec(wt.shape(), v).expect("shape")),
                ];
                if has_bias {
                    grads.push(Some(bias_grad(gd, b, co, oh * ow)));
                }
                grads
            })
        }))
    }
}
