//! Separable bicubic resampling with the Keys kernel (a = −0.5).
//!
//! Downscaling stretches the kernel by the scale factor (antialiasing);
//! upscaling interpolates with the plain kernel. Both clamp sample indices
//! at the borders and normalise each tap set to sum to one.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Source taps for one output coordinate.
#[derive(Debug, Clone)]
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn taps_down(len_in: usize, r: usize) -> Vec<Taps> {
    let rf = r as f64;
    (0..len_in / r)
        .map(|i| {
            let centre = (i as f64 + 0.5) * rf - 0.5;
            let lo = (centre - 2.0 * rf).floor() as i64;
            let hi = (centre + 2.0 * rf).ceil() as i64;
            collect(lo..=hi, len_in, |j| keys((j as f64 - centre) / rf))
        })
        .collect()
}

fn taps_up(len_in: usize, r: usize) -> Vec<Taps> {
    let rf = r as f64;
    (0..len_in * r)
        .map(|i| {
            let centre = (i as f64 + 0.5) / rf - 0.5;
            let base = centre.floor() as i64;
            collect(base - 1..=base + 2, len_in, |j| keys(j as f64 - centre))
        })
        .collect()
}

fn collect(range: std::ops::RangeInclusive<i64>, len: usize, kernel: impl Fn(i64) -> f64) -> Taps {
    let mut index = Vec::new();
    let mut weight = Vec::new();
    for j in range {
        let w = kernel(j);
        if w != 0.0 {
            index.push(j.clamp(0, len as i64 - 1) as usize);
            weight.push(w);
        }
    }
    let total: f64 = weight.iter().sum();
    for w in &mut weight {
        *w /= total;
    }
    Taps { index, weight }
}

fn apply<T: Real>(x: &Tensor4<T>, rows: &[Taps], cols: &[Taps]) -> Result<Tensor4<T>> {
    let s = x.shape();
    let (oh, ow) = (rows.len(), cols.len());
    let out_shape = Shape4::new(s.n, s.c, oh, ow)?;
    let mut out = Tensor4::zeros(out_shape);
    let mut tmp = vec![0.0f64; s.h * ow];
    for plane in 0..s.n * s.c {
        let src = &x.data()[plane * s.h * s.w..(plane + 1) * s.h * s.w];
        for y in 0..s.h {
            let row = &src[y * s.w..(y + 1) * s.w];
            for (j, t) in cols.iter().enumerate() {
                tmp[y * ow + j] = t.index.iter().zip(&t.weight).map(|(&k, &w)| row[k].to_f64() * w).sum();
            }
        }
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for (i, t) in rows.iter().enumerate() {
            for j in 0..ow {
                let v: f64 = t.index.iter().zip(&t.weight).map(|(&k, &w)| tmp[k * ow + j] * w).sum();
                dst[i * ow + j] = T::of(v);
            }
        }
    }
    Ok(out)
}

/// Antialiased bicubic downscale by an integer factor.
pub fn bicubic_downscale<T: Real>(hr: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = hr.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::InvalidArgument(format!(
            "cannot downscale {}x{} by {r}: dimensions must be divisible",
            s.h, s.w
        )));
    }
    apply(hr, &taps_down(s.h, r), &taps_down(s.w, r))
}

/// Bicubic upscale by an integer factor.
pub fn bicubic_upscale<T: Real>(lr: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    if r == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let s = lr.shape();
    apply(lr, &taps_up(s.h, r), &taps_up(s.w, r))
}
