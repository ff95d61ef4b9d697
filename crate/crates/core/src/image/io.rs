//! 8-bit PNG boundary. Conversion to bytes rounds half up.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

#[inline]
pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

fn from_dynamic(img: DynamicImage) -> Result<RasterImage> {
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            RasterImage::new(h as usize, w as usize, 1, g.into_raw().into_iter().map(from_byte).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            RasterImage::new(h as usize, w as usize, 3, rgb.into_raw().into_iter().map(from_byte).collect())
        }
    }
}

fn to_dynamic(img: &RasterImage) -> DynamicImage {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized from shape"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized from shape"))
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Image {
        path: "<memory>".into(),
        source: e,
    })?;
    from_dynamic(img)
}

pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    to_dynamic(img)
        .write_to(&mut buf, ImageFormat::Png)
        .expect("png encoding into memory cannot fail");
    buf.into_inner()
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Image { source, .. } => Error::Image {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(img)).map_err(|e| Error::io(path, e))
}

/// Masks are single-channel PNGs holding 0 and 255; any byte ≥ 128 reads as set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let img = decode_png(bytes)?;
    Ok(BinaryMask::from_image(&img, 0.5))
}

pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    encode_png(&mask.to_image())
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_image(&load_png(path)?, 0.5))
}

pub fn save_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_png(&mask.to_image(), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_rounding_is_half_up() {
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(from_byte(77)), 77);
    }

    #[test]
    fn png_round_trip_of_byte_valued_image() {
        let img = RasterImage::from_fn(5, 3, 3, |y, x, c| from_byte(((y * 31 + x * 7 + c * 101) % 256) as u8)).unwrap();
        assert_eq!(decode_png(&encode_png(&img)).unwrap(), img);
        let gray = img.to_gray();
        let back = decode_png(&encode_png(&gray)).unwrap();
        assert_eq!(back.channels(), 1);
    }

    #[test]
    fn mask_png_is_zero_or_255() {
        let m = BinaryMask::from_fn(4, 6, |y, x| (x + y) % 2 == 0).unwrap();
        let bytes = encode_mask_png(&m);
        let raw = image::load_from_memory(&bytes).unwrap().to_luma8();
        assert!(raw.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(decode_mask_png(&bytes).unwrap(), m);
    }
}
