//! 2-D cross-correlation with analytic backward pass.
//!
//! The production path lowers each batch item to a column matrix (im2col)
//! and runs one GEMM per item. `*_direct` variants are plain nested loops
//! kept as the reference implementation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// Convolution kernel `(out_c, in_c, k, k)` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    weight: Tensor4<T>,
    bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w || s.h.is_multiple_of(2) || !(s.h == 1 || s.h == 3) {
            return Err(Error::InvalidShape(format!(
                "kernel must be 1x1 or 3x3, got {}x{}",
                s.h, s.w
            )));
        }
        if bias.len() != s.n {
            return Err(Error::InvalidShape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                s.n
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_c: usize, in_c: usize, size: usize) -> Result<Self> {
        Self::new(
            Tensor4::zeros(Shape4::new(out_c, in_c, size, size)?),
            vec![T::zero(); out_c],
        )
    }

    /// 3×3 kernel that copies every input channel to the same output channel.
    pub fn dirac(channels: usize) -> Result<Self> {
        let mut k = Self::zeros(channels, channels, 3)?;
        for c in 0..channels {
            k.weight.set(c, c, 1, 1, T::one());
        }
        Ok(k)
    }

    pub fn out_c(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_c(&self) -> usize {
        self.weight.shape().c
    }

    pub fn size(&self) -> usize {
        self.weight.shape().h
    }

    pub fn weight(&self) -> &Tensor4<T> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor4<T> {
        &mut self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Weight and bias buffers borrowed together.
    pub fn parts_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weight.data_mut(), &mut self.bias)
    }

    pub fn num_params(&self) -> usize {
        self.weight.shape().numel() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvKernel<U> {
        ConvKernel {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&b| U::of(b.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    /// Element-wise maximum absolute difference over weights and biases.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let w = self.weight.max_abs_diff(&other.weight)?;
        let b = self
            .bias
            .iter()
            .zip(&other.bias)
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
        Ok(w.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    #[default]
    Zero,
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvPad {
    pub amount: usize,
    pub mode: PadMode,
}

impl ConvPad {
    /// Padding that preserves spatial size for an odd kernel.
    pub fn same(kernel_size: usize, mode: PadMode) -> Self {
        Self {
            amount: (kernel_size - 1) / 2,
            mode,
        }
    }
}

/// Gradient of a layer with respect to its input and, when it has any, its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OpGrad<T> {
    pub d_input: Tensor4<T>,
    pub d_kernel: Option<ConvKernel<T>>,
}

struct Geometry {
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    mode: PadMode,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: Shape4, kernel_in_c: usize, k: usize, pad: ConvPad) -> Result<Self> {
        if x.c != kernel_in_c {
            return Err(Error::InvalidShape(format!(
                "conv2d: input has {} channels, kernel expects {kernel_in_c}",
                x.c
            )));
        }
        let padded_h = x.h + 2 * pad.amount;
        let padded_w = x.w + 2 * pad.amount;
        if padded_h < k || padded_w < k {
            return Err(Error::InvalidShape(format!(
                "conv2d: {k}x{k} kernel larger than padded input {padded_h}x{padded_w}"
            )));
        }
        Ok(Self {
            in_c: x.c,
            h: x.h,
            w: x.w,
            k,
            pad: pad.amount,
            mode: pad.mode,
            oh: padded_h - k + 1,
            ow: padded_w - k + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for an output position and kernel tap, or `None` for a zero pad.
    #[inline]
    fn source(&self, o: usize, tap: usize, extent: usize) -> Option<usize> {
        let i = o as isize + tap as isize - self.pad as isize;
        if i >= 0 && (i as usize) < extent {
            Some(i as usize)
        } else {
            match self.mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(i.clamp(0, extent as isize - 1) as usize),
            }
        }
    }

    /// Output columns `[lo, hi)` whose tap `kx` reads inside the row.
    #[inline]
    fn inner_span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow).max(lo);
        (lo, hi)
    }

    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let cols = self.col_cols();
        let plane = self.h * self.w;
        for c in 0..self.in_c {
            let src = &img[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.inner_span(kx);
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let Some(iy) = self.source(oy, ky, self.h) else {
                            line.fill(T::zero());
                            continue;
                        };
                        let src_row = &src[iy * self.w..(iy + 1) * self.w];
                        let shift = kx as isize - self.pad as isize;
                        if lo < hi {
                            line[lo..hi]
                                .copy_from_slice(&src_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                        }
                        for ox in (0..lo).chain(hi..self.ow) {
                            line[ox] = self.source(ox, kx, self.w).map_or(T::zero(), |ix| src_row[ix]);
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let cols = self.col_cols();
        let plane = self.h * self.w;
        img.fill(T::zero());
        for c in 0..self.in_c {
            let dst = &mut img[c * plane..(c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.inner_span(kx);
                    let shift = kx as isize - self.pad as isize;
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ky, self.h) else {
                            continue;
                        };
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst_row = &mut dst[iy * self.w..(iy + 1) * self.w];
                        if lo < hi {
                            let span = &mut dst_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (d, &g) in span.iter_mut().zip(&line[lo..hi]) {
                                *d += g;
                            }
                        }
                        for ox in (0..lo).chain(hi..self.ow) {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                dst_row[ix] += line[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` with `kernel` plus bias.
pub fn conv2d_forward<T: Real>(x: &Tensor4<T>, kernel: &ConvKernel<T>, pad: ConvPad) -> Result<Tensor4<T>> {
    let s = x.shape();
    let g = Geometry::new(s, kernel.in_c(), kernel.size(), pad)?;
    let out_c = kernel.out_c();
    let out_shape = Shape4::new(s.n, out_c, g.oh, g.ow)?;
    let mut out = Tensor4::zeros(out_shape);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let w = kernel.weight().data();
    let bias = kernel.bias();

    out.data_mut()
        .par_chunks_mut(out_shape.image_len())
        .enumerate()
        .for_each(|(n, dst)| {
            let img = x.image(n);
            let mut col_buf;
            let col: &[T] = if g.is_pointwise() {
                img
            } else {
                col_buf = vec![T::zero(); rows * cols];
                g.im2col(img, &mut col_buf);
                &col_buf
            };
            for (o, plane) in dst.chunks_mut(cols).enumerate() {
                plane.fill(bias[o]);
            }
            T::gemm(
                out_c, rows, cols, T::one(), w, rows as isize, 1, col, cols as isize, 1, T::one(), dst,
                cols as isize, 1,
            );
        });
    Ok(out)
}

/// Gradients of `conv2d_forward(x, kernel, pad)` given the upstream gradient `d_out`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    pad: ConvPad,
    d_out: &Tensor4<T>,
) -> Result<OpGrad<T>> {
    let s = x.shape();
    let g = Geometry::new(s, kernel.in_c(), kernel.size(), pad)?;
    let out_c = kernel.out_c();
    let expected = Shape4::new(s.n, out_c, g.oh, g.ow)?;
    if d_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: expected,
            right: d_out.shape(),
        });
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let w = kernel.weight().data();
    let mut d_input = Tensor4::zeros(s);

    // Per-item weight gradients, reduced below in batch order so the result
    // does not depend on the thread count.
    let per_item: Vec<Vec<T>> = d_input
        .data_mut()
        .par_chunks_mut(s.image_len())
        .enumerate()
        .map(|(n, dx)| {
            let img = x.image(n);
            let dy = d_out.image(n);
            let mut dw = vec![T::zero(); out_c * rows];
            if g.is_pointwise() {
                T::gemm(out_c, cols, rows, T::one(), dy, cols as isize, 1, img, 1, cols as isize, T::zero(), &mut dw, rows as isize, 1);
                T::gemm(rows, out_c, cols, T::one(), w, 1, rows as isize, dy, cols as isize, 1, T::zero(), dx, cols as isize, 1);
            } else {
                let mut col = vec![T::zero(); rows * cols];
                g.im2col(img, &mut col);
                T::gemm(out_c, cols, rows, T::one(), dy, cols as isize, 1, &col, 1, cols as isize, T::zero(), &mut dw, rows as isize, 1);
                T::gemm(rows, out_c, cols, T::one(), w, 1, rows as isize, dy, cols as isize, 1, T::zero(), &mut col, cols as isize, 1);
                g.col2im(&col, dx);
            }
            dw
        })
        .collect();

    let mut d_weight = vec![T::zero(); out_c * rows];
    for dw in &per_item {
        for (acc, &v) in d_weight.iter_mut().zip(dw) {
            *acc += v;
        }
    }
    let mut d_bias = vec![T::zero(); out_c];
    for n in 0..s.n {
        for (o, plane) in d_out.image(n).chunks(cols).enumerate() {
            d_bias[o] += plane.iter().copied().sum::<T>();
        }
    }
    let d_kernel = ConvKernel::new(Tensor4::from_vec(kernel.weight().shape(), d_weight)?, d_bias)?;
    Ok(OpGrad {
        d_input,
        d_kernel: Some(d_kernel),
    })
}

/// Reference forward pass: nested loops, no lowering.
pub fn conv2d_forward_direct<T: Real>(x: &Tensor4<T>, kernel: &ConvKernel<T>, pad: ConvPad) -> Result<Tensor4<T>> {
    let s = x.shape();
    let g = Geometry::new(s, kernel.in_c(), kernel.size(), pad)?;
    let out_shape = Shape4::new(s.n, kernel.out_c(), g.oh, g.ow)?;
    let wt = kernel.weight();
    Ok(Tensor4::from_fn(out_shape, |n, o, oy, ox| {
        let mut acc = kernel.bias()[o];
        for c in 0..g.in_c {
            for ky in 0..g.k {
                let Some(iy) = g.source(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.source(ox, kx, g.w) else { continue };
                    acc += wt.at(o, c, ky, kx) * x.at(n, c, iy, ix);
                }
            }
        }
        acc
    }))
}

/// Reference backward pass: scatters every output gradient through the kernel taps.
pub fn conv2d_backward_direct<T: Real>(
    x: &Tensor4<T>,
    kernel: &ConvKernel<T>,
    pad: ConvPad,
    d_out: &Tensor4<T>,
) -> Result<OpGrad<T>> {
    let s = x.shape();
    let g = Geometry::new(s, kernel.in_c(), kernel.size(), pad)?;
    let expected = Shape4::new(s.n, kernel.out_c(), g.oh, g.ow)?;
    if d_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward_direct",
            left: expected,
            right: d_out.shape(),
        });
    }
    let wt = kernel.weight();
    let mut dx = Tensor4::zeros(s);
    let mut dk = ConvKernel::zeros(kernel.out_c(), kernel.in_c(), g.k)?;
    for n in 0..s.n {
        for o in 0..kernel.out_c() {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let gy = d_out.at(n, o, oy, ox);
                    dk.bias[o] += gy;
                    for c in 0..g.in_c {
                        for ky in 0..g.k {
                            let Some(iy) = g.source(oy, ky, g.h) else { continue };
                            for kx in 0..g.k {
                                let Some(ix) = g.source(ox, kx, g.w) else { continue };
                                let wi = dk.weight.shape().offset(o, c, ky, kx);
                                dk.weight.data_mut()[wi] += gy * x.at(n, c, iy, ix);
                                let xi = s.offset(n, c, iy, ix);
                                dx.data_mut()[xi] += gy * wt.at(o, c, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(OpGrad {
        d_input: dx,
        d_kernel: Some(dk),
    })
}

/// Multiply-accumulate count of one forward convolution, counted as 2 FLOPs each.
pub fn conv2d_flops(out: Shape4, in_c: usize, kernel_size: usize) -> u64 {
    2 * out.numel() as u64 * in_c as u64 * (kernel_size * kernel_size) as u64
}
