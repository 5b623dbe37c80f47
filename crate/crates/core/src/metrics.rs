//! Luma-channel PSNR and SSIM, plus dataset evaluation against a bicubic baseline.

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{span_forward, Mode, SpanModel};
use crate::real::Real;
use crate::resample::bicubic_upscale;
use crate::tensor::{Shape4, Tensor4};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// BT.601 studio-swing luma, `[0,1]` RGB in, `[16,235]` Y out.
pub fn rgb_to_y<T: Real>(img: &Tensor4<T>) -> Result<Tensor4<f64>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::InvalidShape(format!("rgb_to_y needs 3 channels, got {s}")));
    }
    let out = Tensor4::from_fn(s.with_channels(1)?, |n, _, y, x| {
        let r = img.at(n, 0, y, x).to_f64();
        let g = img.at(n, 1, y, x).to_f64();
        let b = img.at(n, 2, y, x).to_f64();
        65.481 * r + 128.553 * g + 24.966 * b + 16.0
    });
    Ok(out)
}

fn cropped(y: &Tensor4<f64>, border: usize) -> Result<Tensor4<f64>> {
    let s = y.shape();
    if 2 * border >= s.h || 2 * border >= s.w {
        return Err(Error::InvalidArgument(format!(
            "border {border} leaves nothing of a {}x{} image",
            s.h, s.w
        )));
    }
    crate::train::crop(y, border, border, s.h - 2 * border, s.w - 2 * border)
}

/// PSNR of two luma images (peak 255); identical inputs give `+inf`.
pub fn psnr_y(a: &Tensor4<f64>, b: &Tensor4<f64>, border: usize) -> Result<f64> {
    a.check_same(b, "psnr")?;
    let (a, b) = (cropped(a, border)?, cropped(b, border)?);
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR on the luma of two RGB images in `[0,1]`.
pub fn psnr<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, border: usize) -> Result<f64> {
    a.check_same(b, "psnr")?;
    psnr_y(&rgb_to_y(a)?, &rgb_to_y(b)?, border)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Valid-window separable filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| plane[y * w + x + k] * g[k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| rows[(y + k) * ow + x] * g[k]).sum();
        }
    }
    out
}

/// Mean SSIM of two luma images: 11×11 Gaussian window (σ = 1.5), valid positions only.
pub fn ssim_y(a: &Tensor4<f64>, b: &Tensor4<f64>, border: usize) -> Result<f64> {
    a.check_same(b, "ssim")?;
    let (a, b) = (cropped(a, border)?, cropped(b, border)?);
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after cropping, got {}x{}",
            s.h, s.w
        )));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    let plane = s.h * s.w;
    for p in 0..s.n * s.c {
        let pa = &a.data()[p * plane..(p + 1) * plane];
        let pb = &b.data()[p * plane..(p + 1) * plane];
        let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter_valid(pa, s.h, s.w, &g);
        let mu_b = filter_valid(pb, s.h, s.w, &g);
        let e_aa = filter_valid(&sq(pa, pa), s.h, s.w, &g);
        let e_bb = filter_valid(&sq(pb, pb), s.h, s.w, &g);
        let e_ab = filter_valid(&sq(pa, pb), s.h, s.w, &g);
        for i in 0..mu_a.len() {
            total += ssim_at(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i]);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn ssim_at(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * (mu_a * mu_b) + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// SSIM on the luma of two RGB images in `[0,1]`.
pub fn ssim<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, border: usize) -> Result<f64> {
    a.check_same(b, "ssim")?;
    ssim_y(&rgb_to_y(a)?, &rgb_to_y(b)?, border)
}

/// An LR input and its HR reference.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub name: String,
    pub lr: Tensor4<f32>,
    pub hr: Tensor4<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bicubic_psnr_db: f64,
    pub bicubic_ssim: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scale: usize,
    pub border: usize,
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<String>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_bicubic_psnr_db: f64,
    pub mean_bicubic_ssim: f64,
    pub mean_wallclock_ms: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim,wallclock_ms";

    fn from_rows(scale: usize, border: usize, rows: Vec<EvalRow>, skipped: Vec<String>) -> Self {
        Self {
            scale,
            border,
            mean_psnr_db: mean(rows.iter().map(|r| r.psnr_db)),
            mean_ssim: mean(rows.iter().map(|r| r.ssim)),
            mean_bicubic_psnr_db: mean(rows.iter().map(|r| r.bicubic_psnr_db)),
            mean_bicubic_ssim: mean(rows.iter().map(|r| r.bicubic_ssim)),
            mean_wallclock_ms: mean(rows.iter().map(|r| r.wallclock_ms)),
            rows,
            skipped,
        }
    }

    /// One row per image, then a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.image, r.psnr_db, r.ssim, r.bicubic_psnr_db, r.bicubic_ssim, r.wallclock_ms
            );
        }
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{:.3}",
            self.mean_psnr_db, self.mean_ssim, self.mean_bicubic_psnr_db, self.mean_bicubic_ssim, self.mean_wallclock_ms
        );
        out
    }

    pub fn to_json(&self) -> String {
        // serde_json writes non-finite floats as null, which is the honest rendering of +inf PSNR.
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }
}

/// Scores `upscale` (and plain bicubic) on each pair, clamping outputs to `[0,1]`.
pub fn evaluate_with(
    pairs: &[EvalPair],
    scale: usize,
    border: usize,
    mut upscale: impl FnMut(&Tensor4<f32>) -> Result<Tensor4<f32>>,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for pair in pairs {
        let (l, h) = (pair.lr.shape(), pair.hr.shape());
        if l.c != 3 || h.c != 3 || l.h * scale != h.h || l.w * scale != h.w {
            warn!("skipping {}: LR {l} ×{scale} does not match HR {h}", pair.name);
            skipped.push(pair.name.clone());
            continue;
        }
        let started = Instant::now();
        let sr = upscale(&pair.lr)?;
        let wallclock_ms = started.elapsed().as_secs_f64() * 1e3;
        if sr.shape() != h {
            return Err(Error::ShapeMismatch {
                op: "evaluate",
                left: sr.shape(),
                right: h,
            });
        }
        let sr = sr.clamp(0.0, 1.0);
        let bic = bicubic_upscale(&pair.lr, scale)?.clamp(0.0, 1.0);
        let hr_y = rgb_to_y(&pair.hr)?;
        let sr_y = rgb_to_y(&sr)?;
        let bic_y = rgb_to_y(&bic)?;
        rows.push(EvalRow {
            image: pair.name.clone(),
            psnr_db: psnr_y(&sr_y, &hr_y, border)?,
            ssim: ssim_y(&sr_y, &hr_y, border)?,
            bicubic_psnr_db: psnr_y(&bic_y, &hr_y, border)?,
            bicubic_ssim: ssim_y(&bic_y, &hr_y, border)?,
            wallclock_ms,
        });
    }
    Ok(EvalReport::from_rows(scale, border, rows, skipped))
}

/// Whole-image evaluation of a model; `border` defaults to the scale.
pub fn evaluate(model: &SpanModel<f32>, pairs: &[EvalPair], border: Option<usize>) -> Result<EvalReport> {
    let r = model.config.scale;
    evaluate_with(pairs, r, border.unwrap_or(r), |lr| Ok(span_forward(lr, model, Mode::Infer)?.0))
}

/// Builds `(1, 3, h, w)` from per-pixel RGB values; handy for fixtures.
pub fn rgb_image(h: usize, w: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Tensor4<f32> {
    let shape = Shape4::new(1, 3, h, w).expect("positive extents");
    Tensor4::from_fn(shape, |_, c, y, x| f(y, x)[c] as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Distribution;

    fn y_of(v: f64, h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::full(Shape4::new(1, 1, h, w).unwrap(), v)
    }

    #[test]
    fn luma_values() {
        let px = |r, g, b| Tensor4::<f64>::from_f64([1, 3, 1, 1], &[r, g, b]).unwrap();
        assert!((rgb_to_y(&px(0.0, 0.0, 0.0)).unwrap().data()[0] - 16.0).abs() < 1e-12);
        assert!((rgb_to_y(&px(1.0, 1.0, 1.0)).unwrap().data()[0] - 235.0).abs() < 1e-3);
        assert!((rgb_to_y(&px(0.0, 1.0, 0.0)).unwrap().data()[0] - 144.553).abs() < 1e-9);
        assert!(rgb_to_y(&Tensor4::<f64>::zeros(Shape4::new(1, 1, 2, 2).unwrap())).is_err());
    }

    #[test]
    fn psnr_reference_points() {
        let a = y_of(100.0, 16, 16);
        assert_eq!(psnr_y(&a, &a, 2).unwrap(), f64::INFINITY);
        let b = y_of(101.0, 16, 16);
        assert!((psnr_y(&a, &b, 2).unwrap() - 48.1308).abs() < 1e-3);
        let (z, f) = (y_of(0.0, 8, 8), y_of(255.0, 8, 8));
        assert_eq!(psnr_y(&z, &f, 0).unwrap(), 0.0);
    }

    #[test]
    fn psnr_via_rgb_offset() {
        // A uniform RGB offset of 1/219 moves luma by exactly one level.
        let a = rgb_image(12, 12, |y, x| [0.2 + 0.01 * y as f64, 0.4, 0.1 + 0.01 * x as f64]).cast::<f64>();
        let b = a.map(|v| v + 1.0 / 219.0);
        assert!((psnr(&a, &b, 0).unwrap() - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = Tensor4::fill_random(Shape4::new(1, 1, 20, 20).unwrap(), 1, Distribution::Uniform { lo: 0.0, hi: 255.0 })
            .unwrap();
        assert_eq!(ssim_y(&a, &a, 0).unwrap(), 1.0);
        let (c, k) = (100.0, 20.0);
        let expected = (2.0 * c * (c + k) + SSIM_C1) / (c * c + (c + k) * (c + k) + SSIM_C1);
        let got = ssim_y(&y_of(c, 16, 16), &y_of(c + k, 16, 16), 0).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn ssim_too_small() {
        assert!(ssim_y(&y_of(1.0, 12, 12), &y_of(1.0, 12, 12), 1).is_err());
        assert!(psnr_y(&y_of(1.0, 4, 4), &y_of(1.0, 4, 4), 2).is_err());
    }

    #[test]
    fn report_means_and_csv() {
        let pairs: Vec<EvalPair> = (0..3)
            .map(|i| {
                let hr = rgb_image(24, 24, |y, x| {
                    let v = ((y * 3 + x * (i + 1)) % 17) as f64 / 17.0;
                    [v, 1.0 - v, 0.5 * v]
                });
                EvalPair {
                    name: format!("img{i}"),
                    lr: crate::resample::bicubic_downscale(&hr, 2).unwrap(),
                    hr,
                }
            })
            .collect();
        let oracle: Vec<Tensor4<f32>> = pairs.iter().map(|p| p.hr.clone()).collect();
        let mut k = 0;
        let perfect = evaluate_with(&pairs, 2, 2, |_| {
            k += 1;
            Ok(oracle[k - 1].clone())
        })
        .unwrap();
        assert!(perfect.rows.iter().all(|r| r.psnr_db == f64::INFINITY && r.ssim == 1.0));

        let gray = evaluate_with(&pairs, 2, 2, |lr| {
            let s = lr.shape();
            Ok(Tensor4::full(Shape4::new(1, 3, s.h * 2, s.w * 2).unwrap(), 0.5))
        })
        .unwrap();
        assert!(gray.mean_bicubic_psnr_db > gray.mean_psnr_db);
        let m = gray.rows.iter().map(|r| r.psnr_db).sum::<f64>() / 3.0;
        assert!((gray.mean_psnr_db - m).abs() < 1e-12);

        let csv = gray.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    #[test]
    fn mismatched_pairs_skipped() {
        let hr = rgb_image(20, 20, |_, _| [0.5; 3]);
        let pair = EvalPair {
            name: "odd".into(),
            lr: rgb_image(9, 10, |_, _| [0.5; 3]),
            hr,
        };
        let r = evaluate_with(&[pair], 2, 2, |lr| Ok(lr.clone())).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.skipped, vec!["odd".to_string()]);
    }
}
