//! 8-bit PNG reading and writing for images (RGB) and class masks (gray).

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png(format!("{}: {e}", path.display()))
}

/// Width and height from the PNG header, without decoding pixels.
pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let bytes = fs::read(path)?;
    let reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| png_err(path, e))?;
    let info = reader.info();
    Ok((info.height as usize, info.width as usize))
}

/// Decode to `[3, H, W]` intensities in `[0, 1]`. Gray images are replicated
/// across channels; alpha is dropped.
pub fn read_rgb(path: &Path) -> Result<Array3<f64>> {
    let bytes = fs::read(path)?;
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err(path, "unexpanded palette image")),
    };
    let stride = info.line_size;
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        let row = &buf[y * stride..];
        for x in 0..w {
            let px = &row[x * channels..];
            for c in 0..3 {
                let v = if channels >= 3 { px[c] } else { px[0] };
                out[[c, y, x]] = v as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Decode a single-channel 8-bit mask holding raw class indices.
pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path)?;
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| png_err(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(
            path,
            format!("mask must be 8-bit grayscale, found {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| buf[y * stride + x]))
}

fn write(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))?;
    Ok(())
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a `[3, H, W]` raster in `[0, 1]`.
pub fn write_rgb(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push(to_u8(img[[c, y, x]]));
            }
        }
    }
    write(path, w, h, png::ColorType::Rgb, &data)
}

/// Encode interleaved 8-bit RGB.
pub fn write_rgb8(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), h * w * 3);
    write(path, w, h, png::ColorType::Rgb, data)
}

pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<u8> = mask.iter().copied().collect();
    write(path, w, h, png::ColorType::Grayscale, &data)
}

/// Encode a `[H, W]` map in `[0, 1]` as 8-bit gray.
pub fn write_gray(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let data: Vec<u8> = map.iter().map(|&v| to_u8(v)).collect();
    write(path, w, h, png::ColorType::Grayscale, &data)
}
