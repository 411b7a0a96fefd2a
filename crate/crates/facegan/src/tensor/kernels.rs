//! Raw forward/backward compute for the layer primitives. Data layout is
//! row-major HWC for images and `[ky, kx, c_in, c_out]` for kernels, so the
//! innermost loops run over contiguous output channels.
//!
//! All loops are sequential with a fixed iteration order; forward values and
//! gradients are bit-reproducible.

use super::Scalar;

/// Output spatial extent of a same-padded convolution: `ceil(extent / stride)`.
pub fn conv2d_out_dim(extent: usize, stride: usize) -> usize {
    (extent + stride - 1) / stride
}

/// Leading pad of a same-padded convolution (excess padding goes at the end).
pub fn same_pad_begin(extent: usize, k: usize, stride: usize) -> usize {
    let out = conv2d_out_dim(extent, stride);
    let total = ((out - 1) * stride + k).saturating_sub(extent);
    total / 2
}

/// Leading pad of the transposed convolution that maps an extent to exactly
/// `stride * extent`. This is the adjoint of the same-padded convolution
/// taking `stride * extent` back down to `extent`.
pub fn transpose_pad_begin(k: usize, stride: usize) -> usize {
    k.saturating_sub(stride) / 2
}

pub struct ConvArgs<'a, T> {
    pub input: &'a [T],
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub kernel: &'a [T],
    pub k: usize,
    pub c_out: usize,
    pub stride: usize,
}

/// Same-padded convolution. Output is `[ceil(h/s), ceil(w/s), c_out]`.
pub fn conv2d_forward<T: Scalar>(a: &ConvArgs<T>, bias: &[T]) -> Vec<T> {
    let (oh, ow) = (conv2d_out_dim(a.h, a.stride), conv2d_out_dim(a.w, a.stride));
    let (py, px) = (
        same_pad_begin(a.h, a.k, a.stride),
        same_pad_begin(a.w, a.k, a.stride),
    );
    let mut out = vec![T::zero(); oh * ow * a.c_out];
    let mut acc = vec![T::zero(); a.c_out];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.copy_from_slice(bias);
            for ky in 0..a.k {
                let iy = (oy * a.stride + ky) as isize - py as isize;
                if iy < 0 || iy >= a.h as isize {
                    continue;
                }
                for kx in 0..a.k {
                    let ix = (ox * a.stride + kx) as isize - px as isize;
                    if ix < 0 || ix >= a.w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize * a.w) + ix as usize) * a.c_in;
                    let k_base = ((ky * a.k + kx) * a.c_in) * a.c_out;
                    for ci in 0..a.c_in {
                        let xv = a.input[in_base + ci];
                        let krow = &a.kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        for (co, kv) in krow.iter().enumerate() {
                            acc[co] = acc[co] + xv * *kv;
                        }
                    }
                }
            }
            out[(oy * ow + ox) * a.c_out..(oy * ow + ox + 1) * a.c_out].copy_from_slice(&acc);
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernel, and bias.
pub fn conv2d_backward<T: Scalar>(
    a: &ConvArgs<T>,
    grad_out: &[T],
    grad_in: &mut [T],
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) {
    let (oh, ow) = (conv2d_out_dim(a.h, a.stride), conv2d_out_dim(a.w, a.stride));
    let (py, px) = (
        same_pad_begin(a.h, a.k, a.stride),
        same_pad_begin(a.w, a.k, a.stride),
    );
    for oy in 0..oh {
        for ox in 0..ow {
            let g_base = (oy * ow + ox) * a.c_out;
            let g = &grad_out[g_base..g_base + a.c_out];
            for (co, gv) in g.iter().enumerate() {
                grad_bias[co] = grad_bias[co] + *gv;
            }
            for ky in 0..a.k {
                let iy = (oy * a.stride + ky) as isize - py as isize;
                if iy < 0 || iy >= a.h as isize {
                    continue;
                }
                for kx in 0..a.k {
                    let ix = (ox * a.stride + kx) as isize - px as isize;
                    if ix < 0 || ix >= a.w as isize {
                        continue;
                    }
                    let in_base = ((iy as usize * a.w) + ix as usize) * a.c_in;
                    let k_base = ((ky * a.k + kx) * a.c_in) * a.c_out;
                    for ci in 0..a.c_in {
                        let xv = a.input[in_base + ci];
                        let krow = &a.kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        let gkrow =
                            &mut grad_kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        let mut gi = T::zero();
                        for (co, gv) in g.iter().enumerate() {
                            gi = gi + krow[co] * *gv;
                            gkrow[co] = gkrow[co] + xv * *gv;
                        }
                        grad_in[in_base + ci] = grad_in[in_base + ci] + gi;
                    }
                }
            }
        }
    }
}

/// Transposed convolution upsampling `[h, w, c_in]` to exactly
/// `[stride*h, stride*w, c_out]`. Gather form: each output position sums the
/// (input, kernel-tap) pairs that map onto it.
pub fn convt2d_forward<T: Scalar>(a: &ConvArgs<T>, bias: &[T]) -> Vec<T> {
    let (oh, ow) = (a.h * a.stride, a.w * a.stride);
    let (py, px) = (
        transpose_pad_begin(a.k, a.stride),
        transpose_pad_begin(a.k, a.stride),
    );
    let mut out = vec![T::zero(); oh * ow * a.c_out];
    let mut acc = vec![T::zero(); a.c_out];
    for jy in 0..oh {
        for jx in 0..ow {
            acc.copy_from_slice(bias);
            for ty in 0..a.k {
                let oy_num = jy as isize + py as isize - ty as isize;
                if oy_num < 0 || oy_num % a.stride as isize != 0 {
                    continue;
                }
                let iy = (oy_num / a.stride as isize) as usize;
                if iy >= a.h {
                    continue;
                }
                for tx in 0..a.k {
                    let ox_num = jx as isize + px as isize - tx as isize;
                    if ox_num < 0 || ox_num % a.stride as isize != 0 {
                        continue;
                    }
                    let ix = (ox_num / a.stride as isize) as usize;
                    if ix >= a.w {
                        continue;
                    }
                    let in_base = (iy * a.w + ix) * a.c_in;
                    let k_base = ((ty * a.k + tx) * a.c_in) * a.c_out;
                    for ci in 0..a.c_in {
                        let xv = a.input[in_base + ci];
                        let krow = &a.kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        for (co, kv) in krow.iter().enumerate() {
                            acc[co] = acc[co] + xv * *kv;
                        }
                    }
                }
            }
            out[(jy * ow + jx) * a.c_out..(jy * ow + jx + 1) * a.c_out].copy_from_slice(&acc);
        }
    }
    out
}

/// Gradients of [`convt2d_forward`] w.r.t. input, kernel, and bias.
pub fn convt2d_backward<T: Scalar>(
    a: &ConvArgs<T>,
    grad_out: &[T],
    grad_in: &mut [T],
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) {
    let (oh, ow) = (a.h * a.stride, a.w * a.stride);
    let (py, px) = (
        transpose_pad_begin(a.k, a.stride),
        transpose_pad_begin(a.k, a.stride),
    );
    for jy in 0..oh {
        for jx in 0..ow {
            let g_base = (jy * ow + jx) * a.c_out;
            let g = &grad_out[g_base..g_base + a.c_out];
            for (co, gv) in g.iter().enumerate() {
                grad_bias[co] = grad_bias[co] + *gv;
            }
            for ty in 0..a.k {
                let oy_num = jy as isize + py as isize - ty as isize;
                if oy_num < 0 || oy_num % a.stride as isize != 0 {
                    continue;
                }
                let iy = (oy_num / a.stride as isize) as usize;
                if iy >= a.h {
                    continue;
                }
                for tx in 0..a.k {
                    let ox_num = jx as isize + px as isize - tx as isize;
                    if ox_num < 0 || ox_num % a.stride as isize != 0 {
                        continue;
                    }
                    let ix = (ox_num / a.stride as isize) as usize;
                    if ix >= a.w {
                        continue;
                    }
                    let in_base = (iy * a.w + ix) * a.c_in;
                    let k_base = ((ty * a.k + tx) * a.c_in) * a.c_out;
                    for ci in 0..a.c_in {
                        let xv = a.input[in_base + ci];
                        let krow = &a.kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        let gkrow =
                            &mut grad_kernel[k_base + ci * a.c_out..k_base + (ci + 1) * a.c_out];
                        let mut gi = T::zero();
                        for (co, gv) in g.iter().enumerate() {
                            gi = gi + krow[co] * *gv;
                            gkrow[co] = gkrow[co] + xv * *gv;
                        }
                        grad_in[in_base + ci] = grad_in[in_base + ci] + gi;
                    }
                }
            }
        }
    }
}

/// Affine map `out[m] = sum_n input[n] * weight[n*m_dim + m] + bias[m]`.
pub fn dense_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let m_dim = bias.len();
    let mut out = bias.to_vec();
    for (n, &xv) in input.iter().enumerate() {
        let wrow = &weight[n * m_dim..(n + 1) * m_dim];
        for (m, wv) in wrow.iter().enumerate() {
            out[m] = out[m] + xv * *wv;
        }
    }
    out
}

pub fn dense_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: &mut [T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let m_dim = grad_out.len();
    for (m, gv) in grad_out.iter().enumerate() {
        grad_bias[m] = grad_bias[m] + *gv;
    }
    for (n, &xv) in input.iter().enumerate() {
        let wrow = &weight[n * m_dim..(n + 1) * m_dim];
        let gwrow = &mut grad_weight[n * m_dim..(n + 1) * m_dim];
        let mut gi = T::zero();
        for (m, gv) in grad_out.iter().enumerate() {
            gi = gi + wrow[m] * *gv;
            gwrow[m] = gwrow[m] + xv * *gv;
        }
        grad_in[n] = grad_in[n] + gi;
    }
}
