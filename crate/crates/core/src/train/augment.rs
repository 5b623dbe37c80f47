//! The eight symmetries of a square: rotations and reflections.
//!
//! | code | transform                         |
//! |------|-----------------------------------|
//! | 0    | identity                          |
//! | 1    | rotate 90° counter-clockwise      |
//! | 2    | rotate 180°                       |
//! | 3    | rotate 270° counter-clockwise     |
//! | 4    | mirror left–right                 |
//! | 5    | mirror top–bottom                 |
//! | 6    | transpose (main diagonal)         |
//! | 7    | anti-transpose (anti-diagonal)    |

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

pub const DIHEDRAL_CODES: u8 = 8;

/// Code whose transform undoes `code`.
pub fn inverse_code(code: u8) -> u8 {
    match code {
        1 => 3,
        3 => 1,
        c => c,
    }
}

/// Whether the transform swaps the two spatial axes.
pub fn swaps_axes(code: u8) -> bool {
    matches!(code, 1 | 3 | 6 | 7)
}

/// Code of applying `first` and then `second`.
pub fn compose(first: u8, second: u8) -> u8 {
    // The eight codes induce eight distinct index maps on a 3×3 grid.
    let n = 3;
    (0..DIHEDRAL_CODES)
        .find(|&c| {
            (0..n).all(|y| {
                (0..n).all(|x| {
                    let (sy, sx) = source(second, y, x, n, n);
                    source(first, sy, sx, n, n) == source(c, y, x, n, n)
                })
            })
        })
        .expect("dihedral group is closed")
}

/// Input coordinate feeding output `(y, x)`; `h`, `w` are the input extents.
fn source(code: u8, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
    match code {
        0 => (y, x),
        1 => (x, w - 1 - y),
        2 => (h - 1 - y, w - 1 - x),
        3 => (h - 1 - x, y),
        4 => (y, w - 1 - x),
        5 => (h - 1 - y, x),
        6 => (x, y),
        7 => (h - 1 - x, w - 1 - y),
        _ => unreachable!("validated by caller"),
    }
}

/// Applies the transform to every image of the batch.
pub fn dihedral_augment<T: Real>(x: &Tensor4<T>, code: u8) -> Result<Tensor4<T>> {
    if code >= DIHEDRAL_CODES {
        return Err(Error::OutOfRange(format!("dihedral code {code} not in 0..8")));
    }
    let s = x.shape();
    if swaps_axes(code) && s.h != s.w {
        return Err(Error::InvalidShape(format!(
            "dihedral code {code} needs a square patch, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = if swaps_axes(code) { (s.w, s.h) } else { (s.h, s.w) };
    let out_shape = Shape4::new(s.n, s.c, oh, ow)?;
    let src = x.data();
    let plane = s.h * s.w;
    let mut data = Vec::with_capacity(src.len());
    for p in 0..s.n * s.c {
        let base = p * plane;
        for y in 0..oh {
            for xx in 0..ow {
                let (sy, sx) = source(code, y, xx, s.h, s.w);
                data.push(src[base + sy * s.w + sx]);
            }
        }
    }
    Tensor4::from_vec(out_shape, data)
}
