//! Dataset directory layout.
//!
//! ```text
//! root/HR/*.png        high-resolution images
//! root/LR/X{r}/*.png   optional low-resolution counterparts, same stems
//! ```
//!
//! If `root/HR` does not exist, `root` itself is taken as the HR directory.
//! When the `LR/X{r}` directory is absent (or degradation is forced) the LR
//! image is made by cropping HR to a multiple of `r` and bicubic downscaling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::image::load_png;
use crate::metrics::EvalPair;
use crate::resample::bicubic_downscale;
use crate::train::{crop, ImageSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// Always synthesise LR from HR even when an LR directory exists.
    pub force_degrade: bool,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            force_degrade: false,
        }
    }

    pub fn hr_dir(&self) -> PathBuf {
        let hr = self.root.join("HR");
        if hr.is_dir() {
            hr
        } else {
            self.root.clone()
        }
    }

    pub fn lr_dir(&self, scale: usize) -> PathBuf {
        self.root.join("LR").join(format!("X{scale}"))
    }

    /// HR files sorted by stem.
    pub fn hr_files(&self) -> Result<Vec<(String, PathBuf)>> {
        if !self.root.exists() {
            return Err(Error::Dataset(format!("{}: no such directory", self.root.display())));
        }
        let files = png_files(&self.hr_dir())?;
        if files.is_empty() {
            return Err(Error::Dataset(format!("{}: no PNG images found", self.hr_dir().display())));
        }
        Ok(files.into_iter().collect())
    }

    /// HR images for training; LR patches are produced on the fly by the sampler.
    pub fn load_training_set(&self) -> Result<ImageSet<f32>> {
        let (names, images) = self
            .hr_files()?
            .into_iter()
            .map(|(name, path)| Ok((name, load_png(path)?)))
            .collect::<Result<(Vec<_>, Vec<_>)>>()?;
        ImageSet::new(names, images)
    }

    /// Aligned LR/HR pairs for evaluation, in stem order.
    pub fn load_eval_pairs(&self, scale: usize) -> Result<Vec<EvalPair>> {
        let lr_dir = self.lr_dir(scale);
        let lr_files = if !self.force_degrade && lr_dir.is_dir() { Some(png_files(&lr_dir)?) } else { None };
        let mut pairs = Vec::new();
        for (name, path) in self.hr_files()? {
            let hr = load_png(&path)?;
            let pair = match &lr_files {
                Some(files) => {
                    let lr_path = files.get(&name).ok_or_else(|| {
                        Error::Dataset(format!("{}: no LR image for stem {name}", lr_dir.display()))
                    })?;
                    let lr = load_png(lr_path)?;
                    let (ls, hs) = (lr.shape(), hr.shape());
                    if ls.h * scale > hs.h || ls.w * scale > hs.w {
                        return Err(Error::Dataset(format!(
                            "{name}: LR {}x{} times {scale} exceeds HR {}x{}",
                            ls.h, ls.w, hs.h, hs.w
                        )));
                    }
                    let hr = crop(&hr, 0, 0, ls.h * scale, ls.w * scale)?;
                    EvalPair { name, lr, hr }
                }
                None => degrade(name, &hr, scale)?,
            };
            pairs.push(pair);
        }
        Ok(pairs)
    }
}

/// Crops `hr` to a multiple of `scale` and bicubic-downscales it.
pub fn degrade(name: String, hr: &crate::Tensor4<f32>, scale: usize) -> Result<EvalPair> {
    let s = hr.shape();
    let (h, w) = (s.h / scale * scale, s.w / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::Dataset(format!("{name}: {}x{} is smaller than scale {scale}", s.h, s.w)));
    }
    let hr = crop(hr, 0, 0, h, w)?;
    let lr = bicubic_downscale(&hr, scale)?;
    Ok(EvalPair { name, lr, hr })
}

/// `*.png` files of a directory keyed by stem (case-insensitive extension).
pub fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}
