//! Sub-pixel rearrangement between channels and space.
//!
//! `out[n, c, r·i + di, r·j + dj] = x[n, c·r² + di·r + dj, i, j]`

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

pub fn pixel_shuffle<T: Real>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::InvalidShape(format!(
            "pixel_shuffle: {} channels not divisible by r²={}",
            s.c,
            r * r
        )));
    }
    let out = Shape4::new(s.n, s.c / (r * r), s.h * r, s.w * r)?;
    let mut y = Tensor4::zeros(out);
    let dst = y.data_mut();
    for n in 0..s.n {
        for c in 0..out.c {
            for di in 0..r {
                for dj in 0..r {
                    let src_c = c * r * r + di * r + dj;
                    for i in 0..s.h {
                        let src = &x.data()[s.offset(n, src_c, i, 0)..][..s.w];
                        let row = out.offset(n, c, r * i + di, 0);
                        for (j, &v) in src.iter().enumerate() {
                            dst[row + r * j + dj] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn pixel_unshuffle<T: Real>(y: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = y.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::InvalidShape(format!(
            "pixel_unshuffle: {}x{} not divisible by r={r}",
            s.h, s.w
        )));
    }
    let out = Shape4::new(s.n, s.c * r * r, s.h / r, s.w / r)?;
    let mut x = Tensor4::zeros(out);
    let dst = x.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for di in 0..r {
                for dj in 0..r {
                    let dst_c = c * r * r + di * r + dj;
                    for i in 0..out.h {
                        let row = s.offset(n, c, r * i + di, 0);
                        let base = out.offset(n, dst_c, i, 0);
                        for j in 0..out.w {
                            dst[base + j] = y.data()[row + r * j + dj];
                        }
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Pixel shuffle is a permutation, so its backward pass is the inverse permutation.
pub fn pixel_shuffle_backward<T: Real>(d_out: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    pixel_unshuffle(d_out, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_for_r1() {
        let x = Tensor4::<f64>::from_f64([1, 2, 2, 1], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn four_channels_to_square() {
        let x = Tensor4::<f64>::from_f64([1, 4, 1, 1], &[1., 2., 3., 4.]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 2, 2).unwrap());
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn index_map_matches_definition() {
        let s = Shape4::new(2, 18, 3, 4).unwrap();
        let x = Tensor4::<f64>::from_fn(s, |n, c, h, w| (((n * 100 + c) * 100 + h) * 100 + w) as f64);
        let r = 3;
        let y = pixel_shuffle(&x, r).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for i in 0..3 {
                    for j in 0..4 {
                        for di in 0..r {
                            for dj in 0..r {
                                assert_eq!(
                                    y.at(n, c, r * i + di, r * j + dj),
                                    x.at(n, c * r * r + di * r + dj, i, j)
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn shape_arithmetic() {
        let x = Tensor4::<f32>::zeros(Shape4::new(2, 48, 5, 7).unwrap());
        let y = pixel_shuffle(&x, 4).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 3, 20, 28).unwrap());
    }

    #[test]
    fn indivisible_channels_error() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 5, 2, 2).unwrap());
        assert!(pixel_shuffle(&x, 2).is_err());
        let y = Tensor4::<f32>::zeros(Shape4::new(1, 1, 3, 4).unwrap());
        assert!(pixel_unshuffle(&y, 2).is_err());
    }
}
