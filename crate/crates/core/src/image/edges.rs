//! Canny-style binary structure maps: blur, Sobel, non-maximum suppression,
//! hysteresis.

use std::collections::VecDeque;

use super::filter::{gaussian_blur_plane, gray_plane, sobel};
use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// Sobel magnitude of an unblurred unit step; thresholds are fractions of it.
const UNIT_STEP_MAGNITUDE: f64 = 4.0;

/// Relative tolerance below which two gradient magnitudes count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeConfig {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub blur_sigma: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            low_threshold: 0.1,
            high_threshold: 0.2,
            blur_sigma: 1.0,
        }
    }
}

impl EdgeConfig {
    /// Lowered threshold used to reveal fine background structure.
    pub fn detail() -> Self {
        Self {
            low_threshold: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.low_threshold) || !unit(self.high_threshold) {
            return Err(Error::invalid(format!(
                "edge thresholds must lie in (0,1): low {} high {}",
                self.low_threshold, self.high_threshold
            )));
        }
        if self.low_threshold > self.high_threshold {
            return Err(Error::invalid("edge low threshold exceeds high threshold"));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::invalid("edge blur sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Gradient magnitude (as a fraction of a unit step) after non-maximum
/// suppression; suppressed pixels are zero.
fn thinned_magnitude(img: &RasterImage, sigma: f64) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let blurred = gaussian_blur_plane(&gray_plane(img), h, w, sigma);
    let (gx, gy) = sobel(&blurred, h, w);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| a.hypot(*b) / UNIT_STEP_MAGNITUDE)
        .collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let tol = TIE_TOLERANCE * peak.max(1.0);
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m <= tol {
                continue;
            }
            // Quantize the gradient direction to one of four neighbour axes.
            let angle = gy[i].atan2(gx[i]).to_degrees();
            let a = if angle < 0.0 { angle + 180.0 } else { angle };
            let (dy, dx) = if !(22.5..157.5).contains(&a) {
                (0, 1)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let back = at(y - dy, x - dx);
            let fwd = at(y + dy, x + dx);
            // Ties resolve toward the forward pixel so plateaus thin to one.
            if m >= back - tol && m > fwd + tol {
                out[i] = m;
            }
        }
    }
    out
}

/// Binary structure map of `img`.
pub fn edge_detect(img: &RasterImage, cfg: &EdgeConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let mag = thinned_magnitude(img, cfg.blur_sigma);
    let mut edges = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in mag.iter().enumerate() {
        if m >= cfg.high_threshold {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && mag[j] >= cfg.low_threshold {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryMask::new(h, w, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn constant_image_has_no_edges() {
        let img = RasterImage::filled(16, 16, 3, 0.4).unwrap();
        assert!(edge_detect(&img, &EdgeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn vertical_step_gives_single_column() {
        let img = RasterImage::from_fn(32, 32, 1, |_, x, _| if x >= 16 { 1.0 } else { 0.0 }).unwrap();
        // Oracle: the blurred step is antisymmetric about x = 15.5, so the
        // central-difference magnitude peaks equally at columns 15 and 16
        // and the forward tie-break keeps column 16 only.
        let edges = edge_detect(&img, &EdgeConfig::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(edges.get(y, x), x == 16, "({y},{x})");
            }
        }
    }

    #[test]
    fn lower_threshold_is_superset() {
        let mut r = rng::seeded(9);
        let img = RasterImage::from_fn(40, 40, 3, |_, _, _| r.random::<f32>()).unwrap();
        let hi = edge_detect(&img, &EdgeConfig { low_threshold: 0.2, high_threshold: 0.3, blur_sigma: 1.0 }).unwrap();
        let lo = edge_detect(&img, &EdgeConfig { low_threshold: 0.05, high_threshold: 0.3, blur_sigma: 1.0 }).unwrap();
        assert!(lo.contains(&hi));
        assert!(lo.count() >= hi.count());
    }

    #[test]
    fn invalid_config_rejected() {
        let img = RasterImage::filled(4, 4, 1, 0.0).unwrap();
        let bad = EdgeConfig { low_threshold: 0.3, high_threshold: 0.2, blur_sigma: 1.0 };
        assert!(edge_detect(&img, &bad).is_err());
        let bad = EdgeConfig { low_threshold: 0.0, high_threshold: 0.2, blur_sigma: 1.0 };
        assert!(edge_detect(&img, &bad).is_err());
    }
}
