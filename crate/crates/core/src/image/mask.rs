use super::RasterImage;
use crate::error::{Error, Result};

/// Strictly binary `H×W` mask; `true` marks the region of interest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

/// Inclusive-exclusive bounding rectangle of the set pixels of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("mask shape {height}x{width} has a zero dimension")));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Thresholds a single-channel image at `threshold` (inclusive).
    pub fn from_image(img: &RasterImage, threshold: f32) -> Self {
        let gray = img.to_gray();
        Self {
            height: gray.height(),
            width: gray.width(),
            data: gray.data().iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// True when every set pixel of `other` is also set here.
    pub fn contains(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "mask shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    y0 = y0.min(y);
                    x0 = x0.min(x);
                    y1 = y1.max(y);
                    x1 = x1.max(x);
                }
            }
        }
        (y0 != usize::MAX).then(|| BoundingBox {
            y0,
            x0,
            height: y1 - y0 + 1,
            width: x1 - x0 + 1,
        })
    }

    /// Single-channel image with 1.0 for set pixels.
    pub fn to_image(&self) -> RasterImage {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        RasterImage::new(self.height, self.width, 1, data).expect("mask shape is valid")
    }

    /// Multiplies every channel of `img` by this mask.
    pub fn apply(&self, img: &RasterImage) -> Result<RasterImage> {
        if (img.height(), img.width()) != self.shape() {
            return Err(Error::invalid("mask/image shape mismatch"));
        }
        let c = img.channels();
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.data[i / c] { v } else { 0.0 })
            .collect();
        RasterImage::new(img.height(), img.width(), c, data)
    }
}
