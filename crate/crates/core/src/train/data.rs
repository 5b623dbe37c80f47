//! Training patches: random aligned crops, dihedral augmentation and
//! bicubic degradation, all driven by a seeded stream per step.

use log::warn;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::resample::bicubic_downscale;
use crate::rng::SeededRng;
use crate::tensor::{Shape4, Tensor4};
use crate::train::augment::{dihedral_augment, DIHEDRAL_CODES};

/// Named images, each stored as a `(1, 3, h, w)` tensor in `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct ImageSet<T> {
    pub names: Vec<String>,
    pub images: Vec<Tensor4<T>>,
}

impl<T: Real> ImageSet<T> {
    pub fn new(names: Vec<String>, images: Vec<Tensor4<T>>) -> Result<Self> {
        if names.len() != images.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} images",
                names.len(),
                images.len()
            )));
        }
        for (name, img) in names.iter().zip(&images) {
            let s = img.shape();
            if s.n != 1 || s.c != 3 {
                return Err(Error::InvalidShape(format!("image {name} has shape {s}, expected (1, 3, h, w)")));
            }
        }
        Ok(Self { names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Where one patch of a batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub code: u8,
}

#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub lr: Tensor4<T>,
    pub hr: Tensor4<T>,
    pub crops: Vec<Crop>,
}

/// Draws `(LR, HR)` patch pairs from the images large enough for the patch size.
#[derive(Debug, Clone)]
pub struct PatchSampler<'a, T> {
    set: &'a ImageSet<T>,
    usable: Vec<usize>,
    patch: usize,
    scale: usize,
}

impl<'a, T: Real> PatchSampler<'a, T> {
    pub fn new(set: &'a ImageSet<T>, patch: usize, scale: usize) -> Result<Self> {
        if scale == 0 || patch == 0 || !patch.is_multiple_of(scale) {
            return Err(Error::InvalidArgument(format!(
                "patch size {patch} must be a positive multiple of scale {scale}"
            )));
        }
        let mut usable = Vec::new();
        for (i, img) in set.images.iter().enumerate() {
            let s = img.shape();
            if s.h >= patch && s.w >= patch {
                usable.push(i);
            } else {
                warn!("skipping {}: {}x{} is smaller than the {patch}px patch", set.names[i], s.h, s.w);
            }
        }
        if usable.is_empty() {
            return Err(Error::Dataset(format!(
                "no image is at least {patch}x{patch} ({} candidates)",
                set.len()
            )));
        }
        Ok(Self {
            set,
            usable,
            patch,
            scale,
        })
    }

    pub fn usable(&self) -> &[usize] {
        &self.usable
    }

    /// Batch for `(seed, stage, step)`; identical arguments give identical batches.
    pub fn sample(&self, batch: usize, seed: u64, stage: u64, step: u64) -> Result<Batch<T>> {
        let mut rng = SeededRng::derived(seed, stage, step);
        let crops: Vec<Crop> = (0..batch)
            .map(|_| {
                let image = self.usable[rng.below(self.usable.len() as u64) as usize];
                let s = self.set.images[image].shape();
                let top = rng.below(((s.h - self.patch) / self.scale + 1) as u64) as usize * self.scale;
                let left = rng.below(((s.w - self.patch) / self.scale + 1) as u64) as usize * self.scale;
                let code = rng.below(DIHEDRAL_CODES as u64) as u8;
                Crop { image, top, left, code }
            })
            .collect();
        let mut hr = Vec::with_capacity(batch);
        let mut lr = Vec::with_capacity(batch);
        for c in &crops {
            let patch = dihedral_augment(&self.crop(c)?, c.code)?;
            lr.push(bicubic_downscale(&patch, self.scale)?);
            hr.push(patch);
        }
        Ok(Batch {
            lr: Tensor4::stack_batch(&lr)?,
            hr: Tensor4::stack_batch(&hr)?,
            crops,
        })
    }

    fn crop(&self, c: &Crop) -> Result<Tensor4<T>> {
        crop(&self.set.images[c.image], c.top, c.left, self.patch, self.patch)
    }
}

/// Copies an `h × w` window starting at `(top, left)` from every image/channel.
pub fn crop<T: Real>(x: &Tensor4<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if top + h > s.h || left + w > s.w {
        return Err(Error::OutOfRange(format!(
            "window {h}x{w} at ({top}, {left}) exceeds {}x{}",
            s.h, s.w
        )));
    }
    let shape = Shape4::new(s.n, s.c, h, w)?;
    Ok(Tensor4::from_fn(shape, |n, c, y, xx| x.at(n, c, top + y, left + xx)))
}
