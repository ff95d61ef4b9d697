use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

pub trait Resize: Sized {
    fn resize(&self, height: usize, width: usize, mode: ResizeMode) -> Result<Self>;
}

fn check_target(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("resize target {height}x{width} has a zero dimension")));
    }
    Ok(())
}

/// Half-pixel-centre source coordinate for output index `i`.
#[inline]
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

#[inline]
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
}

/// Returns `(i0, i1, frac)` for linear interpolation along one axis.
#[inline]
fn linear_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = source_coord(i, src, dst).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, s - i0 as f64)
}

fn bilinear_plane(
    src: &[f32],
    sh: usize,
    sw: usize,
    channels: usize,
    dh: usize,
    dw: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(dh * dw * channels);
    let cols: Vec<_> = (0..dw).map(|x| linear_taps(x, sw, dw)).collect();
    for y in 0..dh {
        let (y0, y1, fy) = linear_taps(y, sh, dh);
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let at = |yy: usize, xx: usize| src[(yy * sw + xx) * channels + c] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    out
}

impl Resize for RasterImage {
    fn resize(&self, height: usize, width: usize, mode: ResizeMode) -> Result<Self> {
        check_target(height, width)?;
        if (height, width) == (self.height(), self.width()) {
            return Ok(self.clone());
        }
        let (sh, sw, c) = self.shape();
        let data = match mode {
            ResizeMode::Nearest => {
                let mut out = Vec::with_capacity(height * width * c);
                for y in 0..height {
                    let sy = nearest_index(y, sh, height);
                    for x in 0..width {
                        out.extend_from_slice(self.pixel(sy, nearest_index(x, sw, width)));
                    }
                }
                out
            }
            ResizeMode::Bilinear => bilinear_plane(self.data(), sh, sw, c, height, width),
        };
        RasterImage::from_clamped(height, width, c, data)
    }
}

impl Resize for BinaryMask {
    /// Nearest keeps the mask binary directly; bilinear interpolates and
    /// re-thresholds at 0.5.
    fn resize(&self, height: usize, width: usize, mode: ResizeMode) -> Result<Self> {
        check_target(height, width)?;
        if (height, width) == self.shape() {
            return Ok(self.clone());
        }
        let (sh, sw) = self.shape();
        match mode {
            ResizeMode::Nearest => BinaryMask::from_fn(height, width, |y, x| {
                self.get(nearest_index(y, sh, height), nearest_index(x, sw, width))
            }),
            ResizeMode::Bilinear => {
                let img = self.to_image().resize(height, width, ResizeMode::Bilinear)?;
                Ok(BinaryMask::from_image(&img, 0.5))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_shape_is_bit_identical() {
        let img = RasterImage::from_fn(4, 4, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0).unwrap();
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            assert_eq!(img.resize(4, 4, mode).unwrap(), img);
        }
    }

    #[test]
    fn constant_downsample_keeps_value() {
        let img = RasterImage::filled(2, 2, 1, 0.7).unwrap();
        let out = img.resize(1, 1, ResizeMode::Bilinear).unwrap();
        assert!((out.get(0, 0, 0) - 0.7).abs() < 1e-7);
    }

    #[test]
    fn checkerboard_bilinear_halves_to_gray() {
        let img = RasterImage::from_fn(4, 4, 1, |y, x, _| ((y + x) % 2) as f32).unwrap();
        let out = img.resize(2, 2, ResizeMode::Bilinear).unwrap();
        // Each output centre sits in the middle of a 2x2 block: weights 1/4 each.
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-7, "{v}");
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = RasterImage::filled(2, 2, 1, 0.0).unwrap();
        assert!(matches!(img.resize(0, 2, ResizeMode::Nearest), Err(Error::InvalidArgument(_))));
        let m = BinaryMask::zeros(2, 2).unwrap();
        assert!(m.resize(3, 0, ResizeMode::Nearest).is_err());
    }

    #[test]
    fn nearest_upsample_replicates_blocks() {
        let m = BinaryMask::from_fn(2, 2, |y, x| y == x).unwrap();
        let up = m.resize(4, 4, ResizeMode::Nearest).unwrap();
        assert!(up.get(0, 0) && up.get(1, 1) && up.get(3, 3) && !up.get(0, 3));
        assert_eq!(up.count(), 8);
    }
}
