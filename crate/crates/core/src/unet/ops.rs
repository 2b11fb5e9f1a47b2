//! Layer kernels on single-sample CHW buffers.

use super::scalar::{gemm, MatRef, Scalar};

/// Unfolds a `c x h x w` image into the `(c*9) x (h*w)` patch matrix of a
/// 3x3, stride 1, zero-padding 1 convolution.
pub(crate) fn im2col3<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, col: &mut Vec<T>) {
    let hw = h * w;
    col.clear();
    col.resize(c * 9 * hw, T::zero());
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates patch gradients back into an image.
pub(crate) fn col2im3<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], &src[..]),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

/// 3x3 convolution followed by ReLU. `weight` is `c_out x c_in x 3 x 3`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_relu_forward<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    out: &mut [T],
    col: &mut Vec<T>,
) {
    let hw = h * w;
    im2col3(input, c_in, h, w, col);
    for (o, row) in out[..c_out * hw].chunks_exact_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    gemm(
        T::one(),
        MatRef::rm(weight, c_out, c_in * 9),
        MatRef::rm(col, c_in * 9, hw),
        T::one(),
        out,
    );
    relu(&mut out[..c_out * hw]);
}

/// Backward of [`conv3_relu_forward`]. `grad_out` is overwritten with the
/// pre-activation gradient. Weight and bias gradients accumulate.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_relu_backward<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    output: &[T],
    grad_out: &mut [T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
    col: &mut Vec<T>,
) {
    let hw = h * w;
    relu_backward(output, grad_out);
    for (o, row) in grad_out.chunks_exact(hw).enumerate() {
        grad_bias[o] = grad_bias[o] + row.iter().copied().sum::<T>();
    }
    im2col3(input, c_in, h, w, col);
    // dW (c_out x c_in*9) += dY (c_out x hw) * col^T (hw x c_in*9)
    gemm(
        T::one(),
        MatRef::rm(grad_out, c_out, hw),
        MatRef::rm_t(col, hw, c_in * 9),
        T::one(),
        grad_weight,
    );
    if let Some(gi) = grad_input {
        // dcol (c_in*9 x hw) = W^T (c_in*9 x c_out) * dY
        gemm(
            T::one(),
            MatRef::rm_t(weight, c_in * 9, c_out),
            MatRef::rm(grad_out, c_out, hw),
            T::zero(),
            col,
        );
        col2im3(col, c_in, h, w, gi);
    }
}

pub(crate) fn relu<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub(crate) fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2, stride-2 max pooling. Records the winning offset (0..4) per output.
pub(crate) fn maxpool_forward<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u8],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let plane = &input[ci * h * w..];
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * w + 2 * x;
                let cand = [plane[base], plane[base + 1], plane[base + w], plane[base + w + 1]];
                let mut best = 0;
                for k in 1..4 {
                    // Strict comparison: the first maximum wins ties.
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                let o = ci * oh * ow + y * ow + x;
                out[o] = cand[best];
                argmax[o] = best as u8;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(
    grad_out: &[T],
    argmax: &[u8],
    c: usize,
    h: usize,
    w: usize,
    grad_input: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let o = ci * oh * ow + y * ow + x;
                let k = argmax[o] as usize;
                let idx = ci * h * w + (2 * y + k / 2) * w + 2 * x + k % 2;
                grad_input[idx] = grad_input[idx] + grad_out[o];
            }
        }
    }
}

/// 2x2, stride-2 transposed convolution followed by ReLU.
/// `weight` is `c_in x c_out x 2 x 2`; input `c_in x h x w`; output `c_out x 2h x 2w`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn upconv_relu_forward<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let hw = h * w;
    scratch.clear();
    scratch.resize(c_out * 4 * hw, T::zero());
    // Y (c_out*4 x hw) = W^T (c_out*4 x c_in) * X (c_in x hw)
    gemm(
        T::one(),
        MatRef::rm_t(weight, c_out * 4, c_in),
        MatRef::rm(input, c_in, hw),
        T::zero(),
        scratch,
    );
    let ow = 2 * w;
    for o in 0..c_out {
        for k in 0..4 {
            let (a, b) = (k / 2, k % 2);
            let src = &scratch[(o * 4 + k) * hw..][..hw];
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x] + bias[o];
                    out[o * 4 * hw + (2 * y + a) * ow + 2 * x + b] =
                        if v > T::zero() { v } else { T::zero() };
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn upconv_relu_backward<T: Scalar>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    output: &[T],
    grad_out: &mut [T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: &mut [T],
    scratch: &mut Vec<T>,
) {
    let hw = h * w;
    let ow = 2 * w;
    relu_backward(output, grad_out);
    scratch.clear();
    scratch.resize(c_out * 4 * hw, T::zero());
    for o in 0..c_out {
        let mut bsum = T::zero();
        for k in 0..4 {
            let (a, b) = (k / 2, k % 2);
            let dst = &mut scratch[(o * 4 + k) * hw..][..hw];
            for y in 0..h {
                for x in 0..w {
                    let g = grad_out[o * 4 * hw + (2 * y + a) * ow + 2 * x + b];
                    dst[y * w + x] = g;
                    bsum = bsum + g;
                }
            }
        }
        grad_bias[o] = grad_bias[o] + bsum;
    }
    // dW (c_in x c_out*4) += X (c_in x hw) * dY^T (hw x c_out*4)
    gemm(
        T::one(),
        MatRef::rm(input, c_in, hw),
        MatRef::rm_t(scratch, hw, c_out * 4),
        T::one(),
        grad_weight,
    );
    // dX (c_in x hw) += W (c_in x c_out*4) * dY (c_out*4 x hw)
    gemm(
        T::one(),
        MatRef::rm(weight, c_in, c_out * 4),
        MatRef::rm(scratch, c_out * 4, hw),
        T::one(),
        grad_input,
    );
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
