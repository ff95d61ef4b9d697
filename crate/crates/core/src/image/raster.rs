use crate::error::{Error, Result};

/// Row-major `H×W×C` floating raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image shape {height}x{width} has a zero dimension")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(format!("pixel value {} at index {pos} outside [0,1]", data[pos])));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from values that may fall slightly outside `[0, 1]`,
    /// clamping them. NaN maps to zero.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    /// Sets a pixel channel, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v.clamp(0.0, 1.0);
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = self.index(y, x, 0);
        &mut self.data[i..i + self.channels]
    }

    /// Luma-weighted grayscale plane (Rec. 601), or a copy for gray images.
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn mean_color(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.channels];
        for p in self.data.chunks_exact(self.channels) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += *v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }

    /// Mean squared error over every sample.
    pub fn mse(&self, other: &RasterImage) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "mse shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<RasterImage> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(RasterImage {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }

    /// Writes `patch` into this image with its top-left corner at `(y0, x0)`,
    /// clipping anything outside the bounds.
    pub fn paste(&mut self, patch: &RasterImage, y0: usize, x0: usize) -> Result<()> {
        if patch.channels != self.channels {
            return Err(Error::invalid("paste channel mismatch"));
        }
        for y in 0..patch.height.min(self.height.saturating_sub(y0)) {
            for x in 0..patch.width.min(self.width.saturating_sub(x0)) {
                let src = patch.index(y, x, 0);
                let dst = self.index(y0 + y, x0 + x, 0);
                self.data[dst..dst + self.channels].copy_from_slice(&patch.data[src..src + self.channels]);
            }
        }
        Ok(())
    }
}
