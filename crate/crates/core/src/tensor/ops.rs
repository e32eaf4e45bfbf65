use super::Tensor;
use crate::error::{Error, Result};

/// Convolution weights `(out_channels, in_channels, kh, kw)` and a bias per
/// output channel. Kernel sides are odd so every patch has a center cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
    bias: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let [out_c, _, kh, kw] = weights.shape()[..] else {
            return Err(Error::Shape(format!(
                "conv weights must be (out, in, kh, kw), got {:?}",
                weights.shape()
            )));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv kernel sides must be odd, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [out_c] {
            return Err(Error::Shape(format!(
                "conv bias must have shape [{out_c}], got {:?}",
                bias.shape()
            )));
        }
        Ok(ConvKernel { weights, bias })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }
}

/// Output length along one axis, or an error when the window does not tile
/// the padded input exactly.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel || (padded - kernel) % stride != 0 {
        return Err(Error::Shape(format!(
            "window {kernel} with stride {stride} and padding {padding} does not tile input length {input}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (in_c, h, w) = input.dims3()?;
        let [out_c, k_in, kh, kw] = weights.shape()[..] else {
            return Err(Error::Shape(format!(
                "conv weights must be rank 4, got {:?}",
                weights.shape()
            )));
        };
        if k_in != in_c {
            return Err(Error::Shape(format!(
                "conv input has {in_c} channels but kernel expects {k_in}"
            )));
        }
        let out_h = conv_output_dim(h, kh, stride, padding)?;
        let out_w = conv_output_dim(w, kw, stride, padding)?;
        Ok(ConvGeometry {
            in_c,
            h,
            w,
            out_c,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds every receptive field into a column: the result is
/// `(in_c * kh * kw) x (out_h * out_w)`, row-major.
pub(crate) fn im2col(x: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let n = g.out_len();
    let mut cols = vec![0.0f32; g.patch_len() * n];
    for ci in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let lo = g.padding.saturating_sub(kx);
                        let hi = (g.w + g.padding).saturating_sub(kx).min(g.out_w);
                        if lo < hi {
                            let start = lo + kx - g.padding;
                            dst_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let n = g.out_len();
    let mut x = vec![0.0f32; g.in_c * g.h * g.w];
    for ci in 0..g.in_c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product with explicit
/// row/column strides on the operands. `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above bound every element the kernel reads or
    // writes inside the three slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation of a `(C_in, H, W)` input: every output value is
/// the sum of the Hadamard product between a kernel slice and the input
/// patch under it, plus that kernel's bias.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel, stride: usize, padding: usize) -> Result<Tensor> {
    conv2d_params(input, kernel.weights(), kernel.bias(), stride, padding)
}

/// [`conv2d`] on borrowed weight and bias tensors.
pub(crate) fn conv2d_params(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    if bias.shape() != [g.out_c] {
        return Err(Error::Shape(format!(
            "conv bias must have shape [{}], got {:?}",
            g.out_c,
            bias.shape()
        )));
    }
    let (out, _) = conv2d_im2col(input, weights, bias, &g)?;
    Ok(out)
}

pub(crate) fn conv2d_im2col(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> Result<(Tensor, Vec<f32>)> {
    let cols = im2col(input.data(), g);
    let n = g.out_len();
    let k = g.patch_len();
    let mut out = vec![0.0f32; g.out_c * n];
    for (oc, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias.data()[oc]);
    }
    gemm(g.out_c, k, n, weights.data(), (k, 1), &cols, (n, 1), 1.0, &mut out);
    let out = Tensor::from_op(vec![g.out_c, g.out_h, g.out_w], out, "conv2d")?;
    Ok((out, cols))
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weights: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    grad_out: &[f32],
    cols: &[f32],
    weights: &Tensor,
    g: &ConvGeometry,
    need_input: bool,
    need_params: bool,
) -> ConvGrads {
    let n = g.out_len();
    let k = g.patch_len();
    let input = need_input.then(|| {
        let mut dcols = vec![0.0f32; k * n];
        gemm(k, g.out_c, n, weights.data(), (1, k), grad_out, (n, 1), 0.0, &mut dcols);
        col2im(&dcols, g)
    });
    let (weights, bias) = if need_params {
        let mut dw = vec![0.0f32; g.out_c * k];
        gemm(g.out_c, n, k, grad_out, (n, 1), cols, (1, n), 0.0, &mut dw);
        let db = grad_out
            .chunks_exact(n)
            .map(|row| row.iter().map(|&v| f64::from(v)).sum::<f64>() as f32)
            .collect();
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    ConvGrads {
        input,
        weights,
        bias,
    }
}

/// Direct six-loop convolution with `f64` accumulators. Slow; kept as the
/// referee for the im2col path.
pub fn conv2d_direct(
    input: &Tensor,
    kernel: &ConvKernel,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel.weights(), stride, padding)?;
    let x = input.data();
    let w = kernel.weights().data();
    let mut out = Vec::with_capacity(g.out_c * g.out_len());
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = f64::from(kernel.bias().data()[oc]);
                for ci in 0..g.in_c {
                    for ky in 0..g.kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let wv = w[((oc * g.in_c + ci) * g.kh + ky) * g.kw + kx];
                            let xv = x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            acc += f64::from(wv) * f64::from(xv);
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    Tensor::from_op(vec![g.out_c, g.out_h, g.out_w], out, "conv2d_direct")
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts_unchecked(input.shape().to_vec(), data)
}

/// Max pooling over `window x window` blocks moved by `stride`.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

/// Max pooling that also returns, for each output cell, the flat input index
/// that won. Ties go to the first cell in scan order.
pub(crate) fn maxpool2d_with_argmax(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if window == 0 {
        return Err(Error::InvalidArgument("pool window must be positive".into()));
    }
    let out_h = conv_output_dim(h, window, stride, 0)?;
    let out_w = conv_output_dim(w, window, stride, 0)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut arg = Vec::with_capacity(c * out_h * out_w);
    for ci in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best_i = (ci * h + oy * stride) * w + ox * stride;
                let mut best = x[best_i];
                for dy in 0..window {
                    let row = (ci * h + oy * stride + dy) * w + ox * stride;
                    for dx in 0..window {
                        if x[row + dx] > best {
                            best = x[row + dx];
                            best_i = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((
        Tensor::from_parts_unchecked(vec![c, out_h, out_w], out),
        arg,
    ))
}

/// `weights · input + bias` for a `(M, N)` weight matrix.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = weights.shape()[..] else {
        return Err(Error::Shape(format!(
            "fully-connected weights must be (M, N), got {:?}",
            weights.shape()
        )));
    };
    if input.rank() != 1 || input.len() != n {
        return Err(Error::Shape(format!(
            "fully-connected layer expects a [{n}] input, got {:?}",
            input.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "fully-connected bias must have shape [{m}], got {:?}",
            bias.shape()
        )));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| {
            let dot: f64 = row
                .iter()
                .zip(x)
                .map(|(&w, &v)| f64::from(w) * f64::from(v))
                .sum();
            (dot + f64::from(b)) as f32
        })
        .collect();
    Tensor::from_op(vec![m], out, "fully_connected")
}

pub(crate) fn fully_connected_backward_input(grad_out: &[f32], weights: &Tensor) -> Vec<f32> {
    let n = weights.shape()[1];
    let mut acc = vec![0.0f64; n];
    for (row, &g) in weights.data().chunks_exact(n).zip(grad_out) {
        if g == 0.0 {
            continue;
        }
        let g = f64::from(g);
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += g * f64::from(w);
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Numerically stable softmax: the maximum is subtracted before
/// exponentiating and the denominator is accumulated in `f64`.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 1 {
        return Err(Error::Shape(format!(
            "softmax expects a vector, got {:?}",
            input.shape()
        )));
    }
    let max = f64::from(input.max());
    let exps: Vec<f64> = input
        .data()
        .iter()
        .map(|&v| (f64::from(v) - max).exp())
        .collect();
    let denom: f64 = exps.iter().sum();
    let out = exps.into_iter().map(|e| (e / denom) as f32).collect();
    Tensor::from_op(input.shape().to_vec(), out, "softmax")
}

/// `log(sum(exp(x)))` computed stably in `f64`.
pub(crate) fn log_sum_exp(x: &[f32]) -> f64 {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let s: f64 = x.iter().map(|&v| (f64::from(v) - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let x = Tensor::full(vec![1, 3, 3], 1.0);
        let k = ConvKernel::new(t(&[1, 1, 1, 1], &[1.0]), t(&[1], &[0.0])).unwrap();
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_sums_patch() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = ConvKernel::new(Tensor::full(vec![1, 1, 3, 3], 1.0), t(&[1], &[0.0])).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[45.0]);
        assert_eq!(conv2d_direct(&x, &k, 1, 0).unwrap().data(), &[45.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_even_kernels() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let k = ConvKernel::new(Tensor::zeros(vec![1, 3, 3, 3]), Tensor::zeros(vec![1])).unwrap();
        let err = conv2d(&x, &k, 1, 1).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        assert!(ConvKernel::new(Tensor::zeros(vec![1, 1, 2, 2]), Tensor::zeros(vec![1])).is_err());
        assert!(ConvKernel::new(Tensor::zeros(vec![1, 1, 3, 3]), Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn strided_conv_matches_direct() {
        let x = Tensor::from_fn(vec![2, 7, 7], |i| ((i * 37 % 11) as f32 - 5.0) * 0.1).unwrap();
        let w = Tensor::from_fn(vec![3, 2, 3, 3], |i| ((i * 13 % 7) as f32 - 3.0) * 0.2).unwrap();
        let k = ConvKernel::new(w, t(&[3], &[0.1, -0.2, 0.3])).unwrap();
        let fast = conv2d(&x, &k, 2, 1).unwrap();
        let slow = conv2d_direct(&x, &k, 2, 1).unwrap();
        assert_eq!(fast.shape(), &[3, 4, 4]);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-5);
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(vec![2, 2], -3.0);
        assert_eq!(relu(&neg), Tensor::zeros(vec![2, 2]));
        let pos = t(&[2], &[0.5, 7.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let y = maxpool2d(&t(&[1, 2, 2], &[1., 2., 3., 4.]), 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        let c = Tensor::full(vec![2, 4, 6], 1.5);
        assert_eq!(maxpool2d(&c, 2, 2).unwrap(), Tensor::full(vec![2, 2, 3], 1.5));
        assert!(maxpool2d(&Tensor::zeros(vec![1, 3, 4]), 2, 2).is_err());
    }

    #[test]
    fn fully_connected_trivial_cases() {
        let x = t(&[3], &[1.0, -2.0, 0.5]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(fully_connected(&x, &eye, &Tensor::zeros(vec![3])).unwrap(), x);
        let b = t(&[2], &[0.25, -4.0]);
        assert_eq!(fully_connected(&x, &Tensor::zeros(vec![2, 3]), &b).unwrap(), b);
        assert!(fully_connected(&t(&[2], &[1., 1.]), &eye, &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::zeros(vec![4])).unwrap();
        assert_eq!(u.data(), &[0.25; 4]);
        let s = softmax(&t(&[2], &[1000.0, 0.0])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-30);
    }
}
