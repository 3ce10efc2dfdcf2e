//! Forward/backward primitives for the four layer kinds.
//!
//! Convolutions are lowered to im2col + matmul so the hot loops are the
//! kernels in [`crate::kernels`]. The `transposed` flag on [`ConvGeom`]
//! selects the up-sampling (fractionally-strided) variant used by decoder
//! stacks; its forward pass is the adjoint of a strided convolution, so the
//! same im2col/col2im pair serves both directions.

use crate::error::{Error, Result};
use crate::kernels::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvGeom {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel == 0
            || self.stride == 0
        {
            return Err(Error::InvalidArgument(format!(
                "conv geometry must have positive channels/kernel/stride: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial size for an input of h×w.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.transposed {
            let oh = (h - 1) * self.stride + self.kernel;
            let ow = (w - 1) * self.stride + self.kernel;
            if oh < 2 * self.padding || ow < 2 * self.padding {
                return Err(Error::Shape(format!(
                    "transposed conv output underflows padding for input {h}x{w}: {self:?}"
                )));
            }
            Ok((oh - 2 * self.padding, ow - 2 * self.padding))
        } else {
            if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
                return Err(Error::Shape(format!(
                    "conv kernel {} exceeds padded input {h}x{w}",
                    self.kernel
                )));
            }
            Ok((
                (h + 2 * self.padding - self.kernel) / self.stride + 1,
                (w + 2 * self.padding - self.kernel) / self.stride + 1,
            ))
        }
    }

    /// Stored weight shape: [OC, IC, K, K], or [IC, OC, K, K] when transposed.
    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.kernel,
            ]
        } else {
            [
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel,
            ]
        }
    }

    /// Multiply-accumulates per sample. For the transposed variant every
    /// input position emits an OC·K² patch, so the grid is the input grid.
    pub fn macs_per_sample(&self, h: usize, w: usize) -> Result<u64> {
        let grid = if self.transposed {
            h * w
        } else {
            let (oh, ow) = self.out_hw(h, w)?;
            oh * ow
        };
        Ok((grid * self.in_channels * self.out_channels * self.kernel * self.kernel) as u64)
    }
}

/// Which gradients the caller wants materialized.
#[derive(Debug, Clone, Copy)]
pub struct GradNeeds {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

#[derive(Debug)]
pub struct ConvGrads<F: Scalar> {
    pub d_input: Option<Tensor<F>>,
    pub d_weight: Option<Tensor<F>>,
    pub d_bias: Option<Tensor<F>>,
}

/// cols[(c·K+ky)·K+kx, gy·GW+gx] = src[c, gy·s+ky−p, gx·s+kx−p] (0 outside).
/// `src` is one sample [C, H, W]; the grid is the matmul column axis.
fn im2col<F: Scalar>(
    src: &[F],
    c_chans: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    grid_h: usize,
    grid_w: usize,
    cols: &mut [F],
) {
    let grid = grid_h * grid_w;
    debug_assert_eq!(cols.len(), c_chans * k * k * grid);
    debug_assert_eq!(src.len(), c_chans * h * w);
    for c in 0..c_chans {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * grid..][..grid];
                for gy in 0..grid_h {
                    let sy = (gy * s + ky) as isize - p as isize;
                    let dst = &mut row[gy * grid_w..(gy + 1) * grid_w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (gx, d) in dst.iter_mut().enumerate() {
                        let sx = (gx * s + kx) as isize - p as isize;
                        *d = if sx >= 0 && sx < w as isize {
                            srow[sx as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: dst[c, gy·s+ky−p, gx·s+kx−p] += cols[...].
fn col2im_add<F: Scalar>(
    cols: &[F],
    c_chans: usize,
    dst_h: usize,
    dst_w: usize,
    k: usize,
    s: usize,
    p: usize,
    grid_h: usize,
    grid_w: usize,
    dst: &mut [F],
) {
    let grid = grid_h * grid_w;
    debug_assert_eq!(cols.len(), c_chans * k * k * grid);
    debug_assert_eq!(dst.len(), c_chans * dst_h * dst_w);
    for c in 0..c_chans {
        let plane = &mut dst[c * dst_h * dst_w..(c + 1) * dst_h * dst_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * grid..][..grid];
                for gy in 0..grid_h {
                    let dy = (gy * s + ky) as isize - p as isize;
                    if dy < 0 || dy >= dst_h as isize {
                        continue;
                    }
                    let drow = &mut plane[dy as usize * dst_w..(dy as usize + 1) * dst_w];
                    let srow = &row[gy * grid_w..(gy + 1) * grid_w];
                    for (gx, &v) in srow.iter().enumerate() {
                        let dx = (gx * s + kx) as isize - p as isize;
                        if dx >= 0 && dx < dst_w as isize {
                            drow[dx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_args<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    g: &ConvGeom,
) -> Result<(usize, usize, usize)> {
    g.validate()?;
    let ishape = input.shape();
    if ishape.len() != 4 {
        return Err(Error::Shape(format!(
            "conv input must be [N,C,H,W], got {ishape:?}"
        )));
    }
    if ishape[1] != g.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            g.in_channels, ishape[1]
        )));
    }
    if weight.shape() != g.weight_shape() {
        return Err(Error::Shape(format!(
            "conv weight shape {:?} does not match geometry {:?}",
            weight.shape(),
            g.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?}, expected [{}]",
                b.shape(),
                g.out_channels
            )));
        }
    }
    Ok((ishape[0], ishape[2], ishape[3]))
}

pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    g: &ConvGeom,
) -> Result<Tensor<F>> {
    let (n, h, w) = check_conv_args(input, weight, bias, g)?;
    let (oh, ow) = g.out_hw(h, w)?;
    let (ic, oc, k) = (g.in_channels, g.out_channels, g.kernel);
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);

    if g.transposed {
        // cols[OC·K·K, H·W] = Wᵀ·x, then scatter patches onto the output grid.
        let mut cols = vec![F::zero(); oc * k * k * h * w];
        for s in 0..n {
            let x = &input.data()[s * ic * h * w..(s + 1) * ic * h * w];
            let o = &mut out.data_mut()[s * oc * oh * ow..(s + 1) * oc * oh * ow];
            cols.fill(F::zero());
            matmul_at_b_acc(&mut cols, weight.data(), x, oc * k * k, ic, h * w);
            col2im_add(&cols, oc, oh, ow, k, g.stride, g.padding, h, w, o);
        }
    } else {
        let mut cols = vec![F::zero(); ic * k * k * oh * ow];
        for s in 0..n {
            let x = &input.data()[s * ic * h * w..(s + 1) * ic * h * w];
            let o = &mut out.data_mut()[s * oc * oh * ow..(s + 1) * oc * oh * ow];
            im2col(x, ic, h, w, k, g.stride, g.padding, oh, ow, &mut cols);
            matmul_acc(o, weight.data(), &cols, oc, ic * k * k, oh * ow);
        }
    }

    if let Some(b) = bias {
        let plane = oh * ow;
        for s in 0..n {
            for c in 0..oc {
                let bias_c = b.data()[c];
                for v in &mut out.data_mut()[(s * oc + c) * plane..(s * oc + c + 1) * plane] {
                    *v += bias_c;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<F: Scalar>(
    d_out: &Tensor<F>,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    g: &ConvGeom,
    need: GradNeeds,
) -> Result<ConvGrads<F>> {
    let (n, h, w) = check_conv_args(input, weight, None, g)?;
    let (oh, ow) = g.out_hw(h, w)?;
    let (ic, oc, k) = (g.in_channels, g.out_channels, g.kernel);
    if d_out.shape() != [n, oc, oh, ow] {
        return Err(Error::Shape(format!(
            "conv d_out shape {:?}, expected {:?}",
            d_out.shape(),
            [n, oc, oh, ow]
        )));
    }

    let mut d_input = need.input.then(|| Tensor::zeros(input.shape()));
    let mut d_weight = need.weight.then(|| Tensor::zeros(weight.shape()));
    let mut d_bias = need.bias.then(|| Tensor::zeros(&[oc]));

    if let Some(db) = d_bias.as_mut() {
        let plane = oh * ow;
        for s in 0..n {
            for c in 0..oc {
                let mut acc = F::zero();
                for &v in &d_out.data()[(s * oc + c) * plane..(s * oc + c + 1) * plane] {
                    acc += v;
                }
                db.data_mut()[c] += acc;
            }
        }
    }

    if g.transposed {
        // d_cols = im2col(d_out) over the input grid; then
        // d_x = W · d_cols, d_W = x · d_colsᵀ.
        let mut d_cols = vec![F::zero(); oc * k * k * h * w];
        for s in 0..n {
            let go = &d_out.data()[s * oc * oh * ow..(s + 1) * oc * oh * ow];
            im2col(go, oc, oh, ow, k, g.stride, g.padding, h, w, &mut d_cols);
            if let Some(dx) = d_input.as_mut() {
                let dxs = &mut dx.data_mut()[s * ic * h * w..(s + 1) * ic * h * w];
                matmul_acc(dxs, weight.data(), &d_cols, ic, oc * k * k, h * w);
            }
            if let Some(dw) = d_weight.as_mut() {
                let x = &input.data()[s * ic * h * w..(s + 1) * ic * h * w];
                matmul_a_bt_acc(dw.data_mut(), x, &d_cols, ic, h * w, oc * k * k);
            }
        }
    } else {
        let mut cols = vec![F::zero(); ic * k * k * oh * ow];
        let mut d_cols = vec![F::zero(); ic * k * k * oh * ow];
        for s in 0..n {
            let go = &d_out.data()[s * oc * oh * ow..(s + 1) * oc * oh * ow];
            if let Some(dw) = d_weight.as_mut() {
                let x = &input.data()[s * ic * h * w..(s + 1) * ic * h * w];
                im2col(x, ic, h, w, k, g.stride, g.padding, oh, ow, &mut cols);
                matmul_a_bt_acc(dw.data_mut(), go, &cols, oc, oh * ow, ic * k * k);
            }
            if let Some(dx) = d_input.as_mut() {
                d_cols.fill(F::zero());
                matmul_at_b_acc(&mut d_cols, weight.data(), go, ic * k * k, oc, oh * ow);
                let dxs = &mut dx.data_mut()[s * ic * h * w..(s + 1) * ic * h * w];
                col2im_add(&d_cols, ic, h, w, k, g.stride, g.padding, oh, ow, dxs);
            }
        }
    }

    Ok(ConvGrads {
        d_input,
        d_weight,
        d_bias,
    })
}

/// Dense layer flattens all trailing axes of the input to [N, IN].
pub fn dense_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let n = *input
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("dense input must be batched".into()))?;
    let in_dim = input.numel() / n.max(1);
    let [out_dim, w_in] = match weight.shape() {
        [o, i] => [*o, *i],
        other => {
            return Err(Error::Shape(format!(
                "dense weight must be [OUT,IN], got {other:?}"
            )))
        }
    };
    if w_in != in_dim {
        return Err(Error::Shape(format!(
            "dense expects input dim {w_in}, got {in_dim}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(Error::Shape(format!(
                "dense bias shape {:?}, expected [{out_dim}]",
                b.shape()
            )));
        }
    }
    let mut out = Tensor::zeros(&[n, out_dim]);
    // out[N,OUT] = x[N,IN] · Wᵀ
    matmul_a_bt_acc(out.data_mut(), input.data(), weight.data(), n, in_dim, out_dim);
    if let Some(b) = bias {
        for row in out.data_mut().chunks_exact_mut(out_dim) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(out)
}

pub fn dense_backward<F: Scalar>(
    d_out: &Tensor<F>,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    need: GradNeeds,
) -> Result<ConvGrads<F>> {
    let n = input.shape()[0];
    let in_dim = input.numel() / n.max(1);
    let out_dim = weight.shape()[0];
    if d_out.shape() != [n, out_dim] {
        return Err(Error::Shape(format!(
            "dense d_out shape {:?}, expected {:?}",
            d_out.shape(),
            [n, out_dim]
        )));
    }

    let d_input = need
        .input
        .then(|| {
            let mut dx = Tensor::zeros(input.shape());
            // d_x[N,IN] = d_out[N,OUT] · W[OUT,IN]
            matmul_acc(dx.data_mut(), d_out.data(), weight.data(), n, out_dim, in_dim);
            dx
        });
    let d_weight = need.weight.then(|| {
        let mut dw = Tensor::zeros(weight.shape());
        // d_W[OUT,IN] = d_outᵀ · x
        matmul_at_b_acc(dw.data_mut(), d_out.data(), input.data(), out_dim, n, in_dim);
        dw
    });
    let d_bias = need.bias.then(|| {
        let mut db = Tensor::zeros(&[out_dim]);
        for row in d_out.data().chunks_exact(out_dim) {
            for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        db
    });

    Ok(ConvGrads {
        d_input,
        d_weight,
        d_bias,
    })
}

pub fn relu_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|x| if x > F::zero() { x } else { F::zero() })
}

/// Subgradient 0 at the kink: positions with x ≤ 0 pass nothing.
pub fn relu_backward<F: Scalar>(d_out: &Tensor<F>, input: &Tensor<F>) -> Tensor<F> {
    let data = d_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Max pooling without padding. Ties resolve to the first (lowest flat index)
/// maximum in scan order. Returned argmax indices are flat offsets into the
/// input buffer.
pub fn maxpool2d_forward<F: Scalar>(
    input: &Tensor<F>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<F>, Vec<u32>)> {
    let [n, c, h, w] = match input.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => {
            return Err(Error::Shape(format!(
                "maxpool input must be [N,C,H,W], got {other:?}"
            )))
        }
    };
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::InvalidArgument(format!(
            "maxpool window {window}/stride {stride} invalid for {h}x{w} input"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let src = input.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (oy * stride) * w + ox * stride;
                let mut best = src[best_idx];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = src[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                dst[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<F: Scalar>(
    d_out: &Tensor<F>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<F>> {
    if d_out.numel() != argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool d_out has {} elements, argmax has {}",
            d_out.numel(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &idx) in d_out.data().iter().zip(argmax) {
        dx.data_mut()[idx as usize] += g;
    }
    Ok(dx)
}
