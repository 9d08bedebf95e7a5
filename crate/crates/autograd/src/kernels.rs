//! Raw numeric kernels behind the graph operations.
//!
//! Convolutions are lowered to GEMM through an im2col buffer laid out as
//! `[C_in * k * k, N * H_out * W_out]`.

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        (n, c_in, h, w): (usize, usize, usize, usize),
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert!(stride >= 1 && k >= 1);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        Self { n, c_in, h, w, c_out, k, stride, pad, h_out, w_out }
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h_out * self.w_out
    }

    /// 1×1 stride-1 convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.plane();
    let cols_w = g.n * p;
    let mut cols = vec![T::zero(); g.patch() * cols_w];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * cols_w..(row + 1) * cols_w];
                for n in 0..g.n {
                    let src = &x[(n * g.c_in + c) * g.h * g.w..(n * g.c_in + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst_line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                        for (ox, d) in dst_line.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.plane();
    let cols_w = g.n * p;
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * cols_w..(row + 1) * cols_w];
                for n in 0..g.n {
                    let dst = &mut dx[(n * g.c_in + c) * g.h * g.w..(n * g.c_in + c + 1) * g.h * g.w];
                    let src = &src_row[n * p..(n + 1) * p];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let src_line = &src[oy * g.w_out..(oy + 1) * g.w_out];
                        for (ox, &s) in src_line.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `w` is `[C_out, C_in, k, k]`, `b` is `[C_out]`.
pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.plane();
    let kdim = g.patch();
    let mut out = vec![T::zero(); g.n * g.c_out * p];
    for n in 0..g.n {
        let o = &mut out[n * g.c_out * p..(n + 1) * g.c_out * p];
        for (co, plane) in o.chunks_mut(p).enumerate() {
            plane.fill(b[co]);
        }
    }
    if g.is_pointwise() {
        for n in 0..g.n {
            let xs = &x[n * g.c_in * p..(n + 1) * g.c_in * p];
            let o = &mut out[n * g.c_out * p..(n + 1) * g.c_out * p];
            T::gemm(g.c_out, kdim, p, T::one(), w, kdim, 1, xs, p, 1, T::one(), o, p, 1);
        }
        return out;
    }
    let cols = im2col(x, g);
    let cols_w = g.n * p;
    for n in 0..g.n {
        let o = &mut out[n * g.c_out * p..(n + 1) * g.c_out * p];
        T::gemm(g.c_out, kdim, p, T::one(), w, kdim, 1, &cols[n * p..], cols_w, 1, T::one(), o, p, 1);
    }
    out
}

/// Accumulates the weight and bias gradients of a convolution.
pub fn conv2d_backward_params<T: Scalar>(
    x: &[T],
    dy: &[T],
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
) {
    let p = g.plane();
    let kdim = g.patch();
    for n in 0..g.n {
        let d = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
        for (co, plane) in d.chunks(p).enumerate() {
            db[co] += plane.iter().copied().sum::<T>();
        }
    }
    if g.is_pointwise() {
        for n in 0..g.n {
            let d = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
            let xs = &x[n * g.c_in * p..(n + 1) * g.c_in * p];
            T::gemm(g.c_out, p, kdim, T::one(), d, p, 1, xs, 1, p, T::one(), dw, kdim, 1);
        }
        return;
    }
    let cols = im2col(x, g);
    let cols_w = g.n * p;
    for n in 0..g.n {
        let d = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
        T::gemm(g.c_out, p, kdim, T::one(), d, p, 1, &cols[n * p..], 1, cols_w, T::one(), dw, kdim, 1);
    }
}

/// Accumulates the input gradient of a convolution.
pub fn conv2d_backward_input<T: Scalar>(w: &[T], dy: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.plane();
    let kdim = g.patch();
    if g.is_pointwise() {
        for n in 0..g.n {
            let d = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
            let dxs = &mut dx[n * g.c_in * p..(n + 1) * g.c_in * p];
            T::gemm(kdim, g.c_out, p, T::one(), w, 1, kdim, d, p, 1, T::one(), dxs, p, 1);
        }
        return;
    }
    let cols_w = g.n * p;
    let mut dcols = vec![T::zero(); kdim * cols_w];
    for n in 0..g.n {
        let d = &dy[n * g.c_out * p..(n + 1) * g.c_out * p];
        T::gemm(kdim, g.c_out, p, T::one(), w, 1, kdim, d, p, 1, T::zero(), &mut dcols[n * p..], cols_w, 1);
    }
    col2im_add(&dcols, g, dx);
}

/// `y[N, out] = x[N, in] · wᵀ + b` with `w` shaped `[out, in]`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    T::gemm(n, d_in, d_out, T::one(), x, d_in, 1, w, 1, d_in, T::one(), &mut y, d_out, 1);
    y
}
