//! Resampling: backward bilinear warping and the 2× pyramid operators.

use crate::error::{Result, TensorError};
use crate::scalar::Float;
use crate::tensor::Tensor;
use crate::var::Var;

/// Bilinear taps for one sampling coordinate clamped to `[0, extent − 1]`.
/// `inside` is false when the clamp was active, which zeroes the coordinate
/// derivative.
#[derive(Clone, Copy)]
struct Tap<F> {
    i0: usize,
    i1: usize,
    frac: F,
    inside: bool,
}

#[inline]
fn tap<F: Float>(pos: F, extent: usize) -> Tap<F> {
    let max = F::from_f64((extent - 1) as f64);
    let (clamped, inside) = if pos < F::zero() {
        (F::zero(), false)
    } else if pos > max {
        (max, false)
    } else {
        (pos, true)
    };
    let fl = clamped.floor();
    let i0 = fl.as_f64() as usize;
    let i1 = (i0 + 1).min(extent - 1);
    Tap { i0, i1, frac: clamped - fl, inside }
}

impl<F: Float> Var<F> {
    /// Backward warp: `out(y, x) = frame(y + flow_y(y, x), x + flow_x(y, x))`
    /// with bilinear interpolation and coordinates clamped to the frame
    /// border. `flow` is `B × 2 × H × W` with channel 0 horizontal and
    /// channel 1 vertical displacement, in pixels.
    pub fn warp(&self, flow: &Var<F>) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        let (fb, fc, fh, fw) = flow.dims4()?;
        if (fb, fc, fh, fw) != (b, 2, h, w) {
            return Err(TensorError::Shape(format!(
                "warp flow {:?} does not match frame {:?}",
                flow.shape(),
                self.shape()
            )));
        }
        let plane = h * w;
        let fd = flow.value().data();
        let xd = self.value().data();
        let mut taps = Vec::with_capacity(b * plane);
        for bi in 0..b {
            let fx = &fd[(bi * 2) * plane..(bi * 2 + 1) * plane];
            let fy = &fd[(bi * 2 + 1) * plane..(bi * 2 + 2) * plane];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let tx = tap(F::from_f64(x as f64) + fx[p], w);
                    let ty = tap(F::from_f64(y as f64) + fy[p], h);
                    taps.push((tx, ty));
                }
            }
        }
        let mut out = vec![F::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let src = &xd[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                let dst = &mut out[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                for (p, d) in dst.iter_mut().enumerate() {
                    let (tx, ty) = taps[bi * plane + p];
                    let top = (F::one() - tx.frac) * src[ty.i0 * w + tx.i0] + tx.frac * src[ty.i0 * w + tx.i1];
                    let bot = (F::one() - tx.frac) * src[ty.i1 * w + tx.i0] + tx.frac * src[ty.i1 * w + tx.i1];
                    *d = (F::one() - ty.frac) * top + ty.frac * bot;
                }
            }
        }
        let value = Tensor::from_vec(self.shape(), out)?;
        Ok(Var::from_op(value, &[self, flow], || {
            let frame = self.value().clone();
            let (need_frame, need_flow) = (self.requires_grad(), flow.requires_grad());
            Box::new(move |g: &Tensor<F>| {
                let xd = frame.data();
                let gd = g.data();
                let mut gframe = need_frame.then(|| vec![F::zero(); xd.len()]);
                let mut gflow = need_flow.then(|| vec![F::zero(); b * 2 * plane]);
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        let src = &xd[off..off + plane];
                        for p in 0..plane {
                            let (tx, ty) = taps[bi * plane + p];
                            let gv = gd[off + p];
                            if let Some(gf) = gframe.as_mut() {
                                let (ax, ay) = (tx.frac, ty.frac);
                                gf[off + ty.i0 * w + tx.i0] += gv * (F::one() - ay) * (F::one() - ax);
                                gf[off + ty.i0 * w + tx.i1] += gv * (F::one() - ay) * ax;
                                gf[off + ty.i1 * w + tx.i0] += gv * ay * (F::one() - ax);
                                gf[off + ty.i1 * w + tx.i1] += gv * ay * ax;
                            }
                            if let Some(gl) = gflow.as_mut() {
                                let v00 = src[ty.i0 * w + tx.i0];
                                let v01 = src[ty.i0 * w + tx.i1];
                                let v10 = src[ty.i1 * w + tx.i0];
                                let v11 = src[ty.i1 * w + tx.i1];
                                if tx.inside {
                                    let d = (F::one() - ty.frac) * (v01 - v00) + ty.frac * (v11 - v10);
                                    gl[(bi * 2) * plane + p] += gv * d;
                                }
                                if ty.inside {
                                    let d = (F::one() - tx.frac) * (v10 - v00) + tx.frac * (v11 - v01);
                                    gl[(bi * 2 + 1) * plane + p] += gv * d;
                                }
                            }
                        }
                    }
                }
                vec![
                    gframe.map(|v| Tensor::from_vec(frame.shape(), v).expect("shape")),
                    gflow.map(|v| Tensor::from_vec(&[b, 2, h, w], v).expect("shape")),
                ]
            })
        }))
    }

    /// 2× average pooling; spatial dims must be even.
    pub fn avg_pool2(&self) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Shape(format!("avg_pool2 needs even dims, got {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value().data();
        let quarter = F::from_f64(0.25);
        let mut out = vec![F::zero(); b * c * oh * ow];
        for bc in 0..b * c {
            let src = &xd[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let s = src[2 * y * w + 2 * x]
                        + src[2 * y * w + 2 * x + 1]
                        + src[(2 * y + 1) * w + 2 * x]
                        + src[(2 * y + 1) * w + 2 * x + 1];
                    dst[y * ow + x] = s * quarter;
                }
            }
        }
        let value = Tensor::from_vec(&[b, c, oh, ow], out)?;
        Ok(Var::from_op(value, &[self], move || {
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let mut gx = vec![F::zero(); b * c * h * w];
                for bc in 0..b * c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[bc * h * w + y * w + x] = gd[bc * oh * ow + (y / 2) * ow + x / 2] * quarter;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&[b, c, h, w], gx).expect("shape"))]
            })
        }))
    }

    /// 2× bilinear upsampling with half-pixel centers (source coordinate
    /// `(o + 0.5) / 2 − 0.5`, clamped at the border).
    pub fn upsample2(&self) -> Result<Var<F>> {
        let (b, c, h, w) = self.dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let ys: Vec<Tap<F>> = (0..oh).map(|o| tap(F::from_f64((o as f64 + 0.5) / 2.0 - 0.5), h)).collect();
        let xs: Vec<Tap<F>> = (0..ow).map(|o| tap(F::from_f64((o as f64 + 0.5) / 2.0 - 0.5), w)).collect();
        let xd = self.value().data();
        let mut out = vec![F::zero(); b * c * oh * ow];
        for bc in 0..b * c {
            let src = &xd[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for (oy, ty) in ys.iter().enumerate() {
                for (ox, tx) in xs.iter().enumerate() {
                    let top = (F::one() - tx.frac) * src[ty.i0 * w + tx.i0] + tx.frac * src[ty.i0 * w + tx.i1];
                    let bot = (F::one() - tx.frac) * src[ty.i1 * w + tx.i0] + tx.frac * src[ty.i1 * w + tx.i1];
                    dst[oy * ow + ox] = (F::one() - ty.frac) * top + ty.frac * bot;
                }
            }
        }
        let value = Tensor::from_vec(&[b, c, oh, ow], out)?;
        Ok(Var::from_op(value, &[self], move || {
            Box::new(move |g: &Tensor<F>| {
                let gd = g.data();
                let mut gx = vec![F::zero(); b * c * h * w];
                for bc in 0..b * c {
                    let gsrc = &gd[bc * oh * ow..(bc + 1) * oh * ow];
                    let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
                    for (oy, ty) in ys.iter().enumerate() {
                        for (ox, tx) in xs.iter().enumerate() {
                            let gv = gsrc[oy * ow + ox];
                            let (ax, ay) = (tx.frac, ty.frac);
                            dst[ty.i0 * w + tx.i0] += gv * (F::one() - ay) * (F::one() - ax);
                            dst[ty.i0 * w + tx.i1] += gv * (F::one() - ay) * ax;
                            dst[ty.i1 * w + tx.i0] += gv * ay * (F::one() - ax);
                            dst[ty.i1 * w + tx.i1] += gv * ay * ax;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&[b, c, h, w], gx).expect("shape"))]
            })
        }))
    }
}
