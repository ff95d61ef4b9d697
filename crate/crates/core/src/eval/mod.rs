//! Gram-matrix style similarity and masked-region similarity computed on
//! features of a frozen, seeded patch encoder at two scales.

use std::sync::OnceLock;

use crate::cond::reference_crop;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage, Resize, ResizeMode};
use crate::rng;
use crate::tensor::Tensor;

/// Side of the square images are resized to before encoding.
pub const RESOLUTION: usize = 32;
/// Patch sizes (and strides) of the two feature scales.
pub const SCALES: [usize; 2] = [4, 8];
pub const FEATURE_CHANNELS: usize = 16;
const SEED: u64 = 0x5eed_0e7a;

/// Per-scale feature maps `[C, n_patches]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub maps: Vec<Tensor>,
}

fn weights() -> &'static [Tensor] {
    static W: OnceLock<Vec<Tensor>> = OnceLock::new();
    W.get_or_init(|| {
        SCALES
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let d = p * p * 3;
                Tensor::randn([FEATURE_CHANNELS, d], (1.0 / d as f64).sqrt(), &mut rng::derived(SEED, i as u64))
            })
            .collect()
    })
}

/// ReLU of a fixed random projection of every non-overlapping patch, pixel
/// values mapped to [-1, 1].
pub fn features(img: &RasterImage) -> Result<FeatureStack> {
    let img = img.to_rgb().resize(RESOLUTION, RESOLUTION, ResizeMode::Bilinear)?;
    let maps = SCALES
        .iter()
        .zip(weights())
        .map(|(&p, w)| {
            let n = RESOLUTION / p;
            let d = p * p * 3;
            let mut out = vec![0.0; FEATURE_CHANNELS * n * n];
            let mut patch = Vec::with_capacity(d);
            for py in 0..n {
                for px in 0..n {
                    patch.clear();
                    for y in 0..p {
                        for x in 0..p {
                            patch.extend(img.pixel(py * p + y, px * p + x).iter().map(|&v| 2.0 * v as f64 - 1.0));
                        }
                    }
                    for c in 0..FEATURE_CHANNELS {
                        let v: f64 = w.row(c).iter().zip(&patch).map(|(a, b)| a * b).sum();
                        out[c * n * n + py * n + px] = v.max(0.0);
                    }
                }
            }
            Tensor::new([FEATURE_CHANNELS, n * n], out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStack { maps })
}

/// `G = F·Fᵀ / (C·H·W)` of a `[C, HW]` map.
pub fn gram(f: &Tensor) -> Vec<f64> {
    let (c, n) = (f.shape()[0], f.shape()[1]);
    let norm = (c * n) as f64;
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            g[i * c + j] = f.row(i).iter().zip(f.row(j)).map(|(a, b)| a * b).sum::<f64>() / norm;
        }
    }
    g
}

/// Cosine similarity, defined as 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean over scales of the cosine similarity of flattened Gram matrices.
pub fn gram_style_score(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    let (fa, fb) = (features(a)?, features(b)?);
    let total: f64 = fa.maps.iter().zip(&fb.maps).map(|(x, y)| cosine(&gram(x), &gram(y))).sum();
    Ok(total / fa.maps.len() as f64)
}

/// Channel means of every scale, concatenated.
fn pooled(f: &FeatureStack) -> Vec<f64> {
    f.maps
        .iter()
        .flat_map(|m| (0..m.shape()[0]).map(|c| m.row(c).iter().sum::<f64>() / m.shape()[1] as f64))
        .collect()
}

/// Cosine similarity of pooled features of the mask's bounding-box crop of
/// `mask ⊙ img` and of `reference`.
pub fn masked_region_similarity(img: &RasterImage, reference: &RasterImage, mask: &BinaryMask) -> Result<f64> {
    if mask.shape() != (img.height(), img.width()) {
        return Err(Error::invalid(format!(
            "mask {:?} does not match image {}x{}",
            mask.shape(),
            img.height(),
            img.width()
        )));
    }
    if mask.is_empty() {
        return Err(Error::invalid("mask is empty"));
    }
    let crop = reference_crop(&img.to_rgb(), mask)?;
    Ok(cosine(&pooled(&features(&crop)?), &pooled(&features(reference)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn noise(seed: u64, size: usize) -> RasterImage {
        let mut r = rng::seeded(seed);
        RasterImage::from_fn(size, size, 3, |_, _, _| r.random::<f32>()).unwrap()
    }

    #[test]
    fn identical_and_symmetric() {
        let (a, b) = (noise(0, 32), noise(1, 40));
        assert!((gram_style_score(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(gram_style_score(&a, &b).unwrap(), gram_style_score(&b, &a).unwrap());
    }

    #[test]
    fn constant_scores_below_noise_pair() {
        let flat = RasterImage::filled(32, 32, 3, 0.3).unwrap();
        let (a, b) = (noise(2, 32), noise(3, 32));
        let s_flat = gram_style_score(&flat, &a).unwrap();
        let s_noise = gram_style_score(&a, &b).unwrap();
        assert!(s_flat < s_noise, "{s_flat} vs {s_noise}");
    }

    #[test]
    fn zero_features_score_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn masked_similarity_cases() {
        let reference = noise(4, 12);
        let mut img = noise(5, 32);
        img.paste(&reference, 10, 6).unwrap();
        let mask = BinaryMask::from_fn(32, 32, |y, x| (10..22).contains(&y) && (6..18).contains(&x)).unwrap();
        let s = masked_region_similarity(&img, &reference, &mask).unwrap();
        assert!((s - 1.0).abs() < 1e-5);
        let mut other = noise(6, 32);
        other.paste(&reference, 10, 6).unwrap();
        assert_eq!(masked_region_similarity(&other, &reference, &mask).unwrap(), s);
        assert!(masked_region_similarity(&img, &reference, &BinaryMask::zeros(32, 32).unwrap()).is_err());
    }
}
