//! Deterministic synthetic RGB images for tests, demos and smoke training.
//!
//! Each image mixes a colour gradient, a few oriented sinusoids, hard-edged
//! discs and a stripe band, so it has both smooth regions and sharp detail.

use std::f64::consts::PI;

use crate::rng::SeededRng;
use crate::tensor::{Shape4, Tensor4};

struct Wave {
    freq: f64,
    angle: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    colour: [f64; 3],
}

/// A `(1, 3, h, w)` image in `[0, 1]`, fully determined by `seed`.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> Tensor4<f32> {
    let mut rng = SeededRng::new(seed);
    let base: [f64; 3] = [rng.uniform_range(0.2, 0.8), rng.uniform_range(0.2, 0.8), rng.uniform_range(0.2, 0.8)];
    let tilt: [f64; 3] = [rng.uniform_range(-0.3, 0.3), rng.uniform_range(-0.3, 0.3), rng.uniform_range(-0.3, 0.3)];
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            freq: rng.uniform_range(0.04, 0.25),
            angle: rng.uniform_range(0.0, PI),
            phase: rng.uniform_range(0.0, 2.0 * PI),
            amp: [rng.uniform_range(0.0, 0.12), rng.uniform_range(0.0, 0.12), rng.uniform_range(0.0, 0.12)],
        })
        .collect();
    let extent = h.min(w) as f64;
    let discs: Vec<Disc> = (0..4)
        .map(|_| Disc {
            cy: rng.uniform_range(0.0, h as f64),
            cx: rng.uniform_range(0.0, w as f64),
            radius: rng.uniform_range(0.08, 0.25) * extent,
            colour: [rng.uniform(), rng.uniform(), rng.uniform()],
        })
        .collect();
    let stripe_period = rng.uniform_range(3.0, 7.0);
    let stripe_row = rng.uniform_range(0.2, 0.7) * h as f64;
    let stripe_height = 0.15 * h as f64;

    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64, x as f64);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = base[c] + tilt[c] * (fx / w as f64 - fy / h as f64);
                for wv in &waves {
                    let t = fx * wv.angle.cos() + fy * wv.angle.sin();
                    px[c] += wv.amp[c] * (2.0 * PI * wv.freq * t + wv.phase).sin();
                }
            }
            for d in &discs {
                if (fy - d.cy).powi(2) + (fx - d.cx).powi(2) <= d.radius * d.radius {
                    px = [
                        0.5 * px[0] + 0.5 * d.colour[0],
                        0.5 * px[1] + 0.5 * d.colour[1],
                        0.5 * px[2] + 0.5 * d.colour[2],
                    ];
                }
            }
            if fy >= stripe_row && fy < stripe_row + stripe_height && (fx / stripe_period).floor() as i64 % 2 == 0 {
                for v in &mut px {
                    *v = 1.0 - *v;
                }
            }
            for c in 0..3 {
                // Quantised to 8-bit levels so PNG round trips are exact.
                let q = (px[c].clamp(0.0, 1.0) * 255.0).round() / 255.0;
                data[(c * h + y) * w + x] = q as f32;
            }
        }
    }
    Tensor4::from_vec(Shape4::new(1, 3, h, w).expect("positive extents"), data).expect("sized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(3, 20, 30);
        assert_eq!(a, synthetic_image(3, 20, 30));
        assert_ne!(a, synthetic_image(4, 20, 30));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.data().iter().all(|&v| ((v as f64 * 255.0).round() - v as f64 * 255.0).abs() < 1e-3));
    }
}
