//! Dense rank-4 tensors in batch→channel→row→column order.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape(format!(
                "all extents must be positive, got ({n},{c},{h},{w})"
            )));
        }
        n.checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::InvalidShape(format!("({n},{c},{h},{w}) overflows usize")))?;
        Ok(Self { n, c, h, w })
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn with_channels(&self, c: usize) -> Result<Self> {
        Self::new(self.n, c, self.h, self.w)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Distribution for [`Tensor4::fill_random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor4{} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Real> Tensor4<T> {
    pub fn full(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "buffer of {} elements does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Convenience constructor for literals in tests and fixtures.
    pub fn from_f64(dims: [usize; 4], values: &[f64]) -> Result<Self> {
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        Self::from_vec(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Deterministic random fill; see [`crate::rng`] for the pinned stream.
    pub fn fill_random(shape: Shape4, seed: u64, dist: Distribution) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let data = match dist {
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidArgument(format!(
                        "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
                    )));
                }
                (0..shape.numel())
                    .map(|_| T::of(rng.uniform_range(lo, hi)))
                    .collect()
            }
            Distribution::Normal { mean, std } => {
                if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "normal needs finite mean and std > 0, got mean {mean}, std {std}"
                    )));
                }
                (0..shape.numel())
                    .map(|_| T::of(rng.normal(mean, std)))
                    .collect()
            }
        };
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `c·h·w` slice of one batch item.
    pub fn image(&self, n: usize) -> &[T] {
        let len = self.shape.image_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn image_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.image_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, op)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "elementwise_add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "elementwise_sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "elementwise_mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stacks tensors along the channel axis; list order is channel order.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_channels of an empty list".into()))?;
        let base = first.shape;
        let mut channels = 0;
        for p in parts {
            let s = p.shape;
            if s.n != base.n || s.h != base.h || s.w != base.w {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: base,
                    right: s,
                });
            }
            channels += s.c;
        }
        let shape = base.with_channels(channels)?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..base.n {
            for p in parts {
                data.extend_from_slice(p.image(n));
            }
        }
        Ok(Self { shape, data })
    }

    /// Copies channels `[from, from + count)`.
    pub fn slice_channels(&self, from: usize, count: usize) -> Result<Self> {
        let end = from.checked_add(count).filter(|&e| e <= self.shape.c && count > 0);
        let Some(end) = end else {
            return Err(Error::OutOfRange(format!(
                "channels [{from}, {}) of a {}-channel tensor",
                from.saturating_add(count),
                self.shape.c
            )));
        };
        let shape = self.shape.with_channels(count)?;
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let img = self.image(n);
            data.extend_from_slice(&img[from * plane..end * plane]);
        }
        Ok(Self { shape, data })
    }

    /// Stacks single images (n = 1 each) into a batch.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_batch of an empty list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut total = 0;
        for it in items {
            if it.shape.c != s.c || it.shape.h != s.h || it.shape.w != s.w {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    left: s,
                    right: it.shape,
                });
            }
            total += it.shape.n;
            data.extend_from_slice(&it.data);
        }
        Self::from_vec(Shape4::new(total, s.c, s.h, s.w)?, data)
    }

    /// Batch item `n` as its own tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.shape.n {
            return Err(Error::OutOfRange(format!(
                "batch index {n} of {}",
                self.shape.n
            )));
        }
        Self::from_vec(
            Shape4::new(1, self.shape.c, self.shape.h, self.shape.w)?,
            self.image(n).to_vec(),
        )
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}
