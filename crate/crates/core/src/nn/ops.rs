//! Forward and backward kernels for the layers used by both networks.
//!
//! Every function here is pure. The tape in [`super::tape`] records calls
//! to these kernels and replays the matching `*_backward` function.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, zero padded. Odd padding
    /// totals put the extra row/column at the bottom/right.
    Same,
    Valid,
}

/// Resolved spatial bookkeeping for one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, kernel: Shape, stride: usize, padding: Padding) -> Result<Self> {
        if input.is_empty() || kernel.is_empty() {
            return Err(Error::shape(
                "conv2d",
                format!("zero-sized operand: input {input}, kernel {kernel}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if kernel.c != input.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel expects {} input channels, input has {}",
                    kernel.c, input.c
                ),
            ));
        }
        let (kh, kw) = (kernel.h, kernel.w);
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape(
                        "conv2d",
                        format!("same padding needs odd kernel, got {kh}x{kw}"),
                    ));
                }
                let oh = input.h.div_ceil(stride);
                let ow = input.w.div_ceil(stride);
                let th = ((oh - 1) * stride + kh).saturating_sub(input.h);
                let tw = ((ow - 1) * stride + kw).saturating_sub(input.w);
                (oh, ow, th / 2, tw / 2)
            }
            Padding::Valid => {
                if kh > input.h || kw > input.w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {kh}x{kw} larger than input {}x{}", input.h, input.w),
                    ));
                }
                (
                    (input.h - kh) / stride + 1,
                    (input.w - kw) / stride + 1,
                    0,
                    0,
                )
            }
        };
        Ok(ConvGeometry {
            in_c: input.c,
            in_h: input.h,
            in_w: input.w,
            out_c: kernel.n,
            out_h,
            out_w,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if it
    /// falls inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.in_c {
        let src = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky, g.pad_top, g.in_h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.pad_left, g.in_w) {
                                    Some(ix) => src_row[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.in_c {
        let dst = &mut dx[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) {
                            dst[iy * g.in_w + ix] = dst[iy * g.in_w + ix] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor4<T>, len: usize) -> Result<()> {
    if bias.len() != len {
        return Err(Error::shape(
            op,
            format!("bias has {} entries, expected {len}", bias.len()),
        ));
    }
    Ok(())
}

/// 2-D cross-correlation, `kernel` shaped `(out_c, in_c, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    bias: &Tensor4<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    check_bias("conv2d", bias, g.out_c)?;
    let n = input.shape().n;
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut out = Tensor4::zeros(Shape::new(n, g.out_c, g.out_h, g.out_w));
    let mut cols = vec![T::zero(); k * plane];
    for b in 0..n {
        im2col(&g, input.item_slice(b), &mut cols);
        let y = out.item_slice_mut(b);
        for (oc, row) in y.chunks_mut(plane).enumerate() {
            row.fill(bias.data()[oc]);
        }
        T::gemm(
            g.out_c,
            k,
            plane,
            T::one(),
            kernel.data(),
            k as isize,
            1,
            &cols,
            plane as isize,
            1,
            T::one(),
            y,
            plane as isize,
            1,
        );
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let n = input.shape().n;
    grad_out.expect_shape("conv2d_backward", Shape::new(n, g.out_c, g.out_h, g.out_w))?;
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut dx = Tensor4::zeros(input.shape());
    let mut dw = Tensor4::zeros(kernel.shape());
    let mut db = vec![T::zero(); g.out_c];
    let mut cols = vec![T::zero(); k * plane];
    let mut dcols = vec![T::zero(); k * plane];
    for b in 0..n {
        let dy = grad_out.item_slice(b);
        for (oc, row) in dy.chunks(plane).enumerate() {
            db[oc] = db[oc] + row.iter().fold(T::zero(), |a, &v| a + v);
        }
        im2col(&g, input.item_slice(b), &mut cols);
        // dW (oc x k) += dY (oc x P) * cols^T (P x k)
        T::gemm(
            g.out_c,
            plane,
            k,
            T::one(),
            dy,
            plane as isize,
            1,
            &cols,
            1,
            plane as isize,
            T::one(),
            dw.data_mut(),
            k as isize,
            1,
        );
        // dcols (k x P) = W^T (k x oc) * dY (oc x P)
        T::gemm(
            k,
            g.out_c,
            plane,
            T::one(),
            kernel.data(),
            1,
            k as isize,
            dy,
            plane as isize,
            1,
            T::zero(),
            &mut dcols,
            plane as isize,
            1,
        );
        col2im(&g, &dcols, dx.item_slice_mut(b));
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dw,
        bias: Tensor4::vector(&db),
    })
}

fn check_channels<T: Scalar>(
    op: &'static str,
    input: &Tensor4<T>,
    per_channel: &Tensor4<T>,
) -> Result<()> {
    if per_channel.len() != input.shape().c {
        return Err(Error::shape(
            op,
            format!(
                "{} per-channel values for {} channels",
                per_channel.len(),
                input.shape().c
            ),
        ));
    }
    Ok(())
}

/// Parametric ReLU with one learned slope per channel.
pub fn prelu<T: Scalar>(input: &Tensor4<T>, slope: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_channels("prelu", input, slope)?;
    let s = input.shape();
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = (i / s.plane_len()) % s.c;
        if *v < T::zero() {
            *v = *v * slope.data()[c];
        }
    }
    Ok(out)
}

/// Returns `(d input, d slope)`.
pub fn prelu_backward<T: Scalar>(
    input: &Tensor4<T>,
    slope: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    input.expect_shape("prelu_backward", grad_out.shape())?;
    let s = input.shape();
    let mut dx = grad_out.clone();
    let mut ds = vec![T::zero(); s.c];
    for (i, (d, &x)) in dx.data_mut().iter_mut().zip(input.data()).enumerate() {
        let c = (i / s.plane_len()) % s.c;
        if x < T::zero() {
            ds[c] = ds[c] + *d * x;
            *d = *d * slope.data()[c];
        }
    }
    Ok((dx, Tensor4::vector(&ds)))
}

pub fn leaky_relu<T: Scalar>(input: &Tensor4<T>, slope: f64) -> Tensor4<T> {
    let a = T::of(slope);
    input.map(|v| if v < T::zero() { v * a } else { v })
}

pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor4<T>,
    slope: f64,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let a = T::of(slope);
    input.zip_map(grad_out, |x, d| if x < T::zero() { d * a } else { d })
}

pub fn tanh<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| v.tanh())
}

pub fn tanh_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, |y, d| d * (T::one() - y * y))
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(
    output: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    output.zip_map(grad_out, |y, d| d * y * (T::one() - y))
}

/// Result of a training-mode batch normalisation.
pub struct BatchNormTrain<T> {
    pub output: Tensor4<T>,
    /// Normalised input before scale/shift, kept for the backward pass.
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased batch variance.
    pub batch_var: Vec<T>,
}

fn bn_check<T: Scalar>(input: &Tensor4<T>, scale: &Tensor4<T>, shift: &Tensor4<T>) -> Result<()> {
    check_channels("batch_norm", input, scale)?;
    check_channels("batch_norm", input, shift)?;
    if input.shape().n * input.shape().plane_len() == 0 {
        return Err(Error::shape("batch_norm", "empty batch"));
    }
    Ok(())
}

/// Normalises each channel by its batch statistics.
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor4<T>,
    scale: &Tensor4<T>,
    shift: &Tensor4<T>,
    eps: f64,
) -> Result<BatchNormTrain<T>> {
    bn_check(input, scale, shift)?;
    let s = input.shape();
    let plane = s.plane_len();
    let m = (s.n * plane) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for b in 0..s.n {
        for c in 0..s.c {
            let start = input.index(b, c, 0, 0);
            mean[c] += input.data()[start..start + plane]
                .iter()
                .map(|v| v.f64())
                .sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..s.n {
        for c in 0..s.c {
            let start = input.index(b, c, 0, 0);
            var[c] += input.data()[start..start + plane]
                .iter()
                .map(|v| (v.f64() - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mut normalized = Tensor4::zeros(s);
    let mut output = Tensor4::zeros(s);
    for b in 0..s.n {
        for c in 0..s.c {
            let start = input.index(b, c, 0, 0);
            let mu = T::of(mean[c]);
            for i in start..start + plane {
                let xh = (input.data()[i] - mu) * inv_std[c];
                normalized.data_mut()[i] = xh;
                output.data_mut()[i] = xh * scale.data()[c] + shift.data()[c];
            }
        }
    }
    Ok(BatchNormTrain {
        output,
        normalized,
        inv_std,
        batch_mean: mean.into_iter().map(T::of).collect(),
        batch_var: var.into_iter().map(T::of).collect(),
    })
}

/// Returns `(d input, d scale, d shift)`.
pub fn batch_norm_train_backward<T: Scalar>(
    normalized: &Tensor4<T>,
    inv_std: &[T],
    scale: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    normalized.expect_shape("batch_norm_backward", grad_out.shape())?;
    let s = normalized.shape();
    let plane = s.plane_len();
    let m = T::of((s.n * plane) as f64);
    let mut dscale = vec![T::zero(); s.c];
    let mut dshift = vec![T::zero(); s.c];
    for b in 0..s.n {
        for c in 0..s.c {
            let start = normalized.index(b, c, 0, 0);
            for i in start..start + plane {
                let d = grad_out.data()[i];
                dshift[c] = dshift[c] + d;
                dscale[c] = dscale[c] + d * normalized.data()[i];
            }
        }
    }
    let mut dx = Tensor4::zeros(s);
    for b in 0..s.n {
        for c in 0..s.c {
            let start = normalized.index(b, c, 0, 0);
            let k = scale.data()[c] * inv_std[c] / m;
            for i in start..start + plane {
                dx.data_mut()[i] =
                    k * (m * grad_out.data()[i] - dshift[c] - normalized.data()[i] * dscale[c]);
            }
        }
    }
    Ok((dx, Tensor4::vector(&dscale), Tensor4::vector(&dshift)))
}

/// Inference-mode batch normalisation with fixed running statistics.
pub fn batch_norm_infer<T: Scalar>(
    input: &Tensor4<T>,
    scale: &Tensor4<T>,
    shift: &Tensor4<T>,
    running_mean: &Tensor4<T>,
    running_var: &Tensor4<T>,
    eps: f64,
) -> Result<Tensor4<T>> {
    bn_check(input, scale, shift)?;
    check_channels("batch_norm", input, running_mean)?;
    check_channels("batch_norm", input, running_var)?;
    if !running_mean.all_finite()
        || running_var
            .data()
            .iter()
            .any(|v| !v.is_finite() || *v < T::zero())
    {
        return Err(Error::Invalid(
            "batch_norm: running statistics are not populated".into(),
        ));
    }
    let s = input.shape();
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = (i / s.plane_len()) % s.c;
        let inv = T::one() / (running_var.data()[c] + T::of(eps)).sqrt();
        *v = (*v - running_mean.data()[c]) * inv * scale.data()[c] + shift.data()[c];
    }
    Ok(out)
}

/// Returns `(d input, d scale, d shift)`; running statistics are constants.
pub fn batch_norm_infer_backward<T: Scalar>(
    input: &Tensor4<T>,
    scale: &Tensor4<T>,
    running_mean: &Tensor4<T>,
    running_var: &Tensor4<T>,
    eps: f64,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    input.expect_shape("batch_norm_backward", grad_out.shape())?;
    let s = input.shape();
    let mut dx = grad_out.clone();
    let mut dscale = vec![T::zero(); s.c];
    let mut dshift = vec![T::zero(); s.c];
    for (i, d) in dx.data_mut().iter_mut().enumerate() {
        let c = (i / s.plane_len()) % s.c;
        let inv = T::one() / (running_var.data()[c] + T::of(eps)).sqrt();
        let xh = (input.data()[i] - running_mean.data()[c]) * inv;
        dshift[c] = dshift[c] + *d;
        dscale[c] = dscale[c] + *d * xh;
        *d = *d * scale.data()[c] * inv;
    }
    Ok((dx, Tensor4::vector(&dscale), Tensor4::vector(&dshift)))
}

/// Fully connected layer. Each batch item is flattened; `weights` is shaped
/// `(out, in, 1, 1)` and the result `(n, out, 1, 1)`.
pub fn dense<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let ws = weights.shape();
    let in_len = s.item_len();
    if ws.item_len() != in_len {
        return Err(Error::shape(
            "dense",
            format!("weights take {} inputs, got {in_len}", ws.item_len()),
        ));
    }
    check_bias("dense", bias, ws.n)?;
    let mut out = Tensor4::zeros(Shape::new(s.n, ws.n, 1, 1));
    for b in 0..s.n {
        out.item_slice_mut(b).copy_from_slice(bias.data());
    }
    // Y (n x out) = X (n x in) * W^T (in x out)
    T::gemm(
        s.n,
        in_len,
        ws.n,
        T::one(),
        input.data(),
        in_len as isize,
        1,
        weights.data(),
        1,
        in_len as isize,
        T::one(),
        out.data_mut(),
        ws.n as isize,
        1,
    );
    Ok(out)
}

/// Returns `(d input, d weights, d bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    let s = input.shape();
    let ws = weights.shape();
    let in_len = s.item_len();
    grad_out.expect_shape("dense_backward", Shape::new(s.n, ws.n, 1, 1))?;
    let mut dx = Tensor4::zeros(s);
    let mut dw = Tensor4::zeros(ws);
    // dX (n x in) = dY (n x out) * W (out x in)
    T::gemm(
        s.n,
        ws.n,
        in_len,
        T::one(),
        grad_out.data(),
        ws.n as isize,
        1,
        weights.data(),
        in_len as isize,
        1,
        T::zero(),
        dx.data_mut(),
        in_len as isize,
        1,
    );
    // dW (out x in) = dY^T (out x n) * X (n x in)
    T::gemm(
        ws.n,
        s.n,
        in_len,
        T::one(),
        grad_out.data(),
        1,
        ws.n as isize,
        input.data(),
        in_len as isize,
        1,
        T::zero(),
        dw.data_mut(),
        in_len as isize,
        1,
    );
    let mut db = vec![T::zero(); ws.n];
    for b in 0..s.n {
        for (o, &d) in grad_out.item_slice(b).iter().enumerate() {
            db[o] = db[o] + d;
        }
    }
    Ok((dx, dw, Tensor4::vector(&db)))
}
