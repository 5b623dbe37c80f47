//! 8-bit PNG codec boundary. Images live in memory as `(1, 3, h, w)` tensors in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads an 8-bit grey, grey+alpha, RGB or RGBA PNG. Grey is replicated to
/// three channels; alpha is dropped. Palette and 16-bit images are rejected.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor4<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != BitDepth::Eight {
        return Err(image_err(path, format!("unsupported bit depth {depth:?}; only 8-bit PNGs are read")));
    }
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(image_err(path, "palette PNGs are not supported")),
    };
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let shape = Shape4::new(1, 3, h, w)?;
    let stride = info.line_size;
    Ok(Tensor4::from_fn(shape, |_, c, y, x| {
        let px = &buf[y * stride + x * channels..];
        let v = if channels < 3 { px[0] } else { px[c] };
        v as f32 / 255.0
    }))
}

fn quantise<T: Real>(v: T) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB PNG after clamping to `[0, 1]` and rounding to 8-bit levels.
/// Single-channel tensors are written as greyscale.
pub fn save_png<T: Real>(img: &Tensor4<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::InvalidShape(format!("save_png needs (1, 1|3, h, w), got {s}")));
    }
    let mut bytes = Vec::with_capacity(s.c * s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                bytes.push(quantise(img.at(0, c, y, x)));
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), s.w as u32, s.h as u32);
    enc.set_color(if s.c == 3 { ColorType::Rgb } else { ColorType::Grayscale });
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))?;
    Ok(())
}
