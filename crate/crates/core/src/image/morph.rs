//! Distance transform, dilation, and the random boundary distortion applied
//! to training masks.

use rand::Rng as _;

use super::BinaryMask;
use crate::rng;

/// Minimum and maximum outward growth of a distorted mask, in pixels.
pub const DISTORT_MIN_PX: f64 = 3.0;
pub const DISTORT_MAX_PX: f64 = 6.0;

/// Lattice spacing of the smooth noise that modulates the growth radius.
const NOISE_CELL: usize = 8;

const INF: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from each pixel to the nearest set pixel.
/// Returns `f64::INFINITY`-like values (≥ 1e20) when the mask is empty.
pub fn squared_distance_to_set(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.shape();
    let n = h.max(w);
    let mut grid: Vec<f64> = mask.data().iter().map(|&b| if b { 0.0 } else { INF }).collect();
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Euclidean dilation: every pixel within `radius` of a set pixel.
pub fn dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let r2 = radius * radius;
    let d2 = squared_distance_to_set(mask);
    let (h, w) = mask.shape();
    BinaryMask::new(h, w, d2.iter().map(|&d| d <= r2).collect()).expect("shape preserved")
}

/// Smooth value noise in `[0, 1]`: seeded lattice values bilinearly
/// interpolated with smoothstep weights.
pub fn value_noise(height: usize, width: usize, cell: usize, seed: u64) -> Vec<f64> {
    let gh = height / cell + 2;
    let gw = width / cell + 2;
    let mut r = rng::seeded(seed);
    let lattice: Vec<f64> = (0..gh * gw).map(|_| r.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let l = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = l(gy, gx) * (1.0 - tx) + l(gy, gx + 1) * tx;
            let bot = l(gy + 1, gx) * (1.0 - tx) + l(gy + 1, gx + 1) * tx;
            out.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0));
        }
    }
    out
}

/// Grows the mask outward by a per-pixel radius in `[3, 6)` px drawn from a
/// seeded smooth noise field. A background pixel joins when its distance to
/// the mask is below `3 + 3·n(p)`.
pub fn distort_mask(mask: &BinaryMask, seed: u64) -> BinaryMask {
    if mask.is_empty() {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let d2 = squared_distance_to_set(mask);
    let noise = value_noise(h, w, NOISE_CELL, seed);
    let data = d2
        .iter()
        .zip(&noise)
        .map(|(&d2, &n)| {
            let limit = DISTORT_MIN_PX + (DISTORT_MAX_PX - DISTORT_MIN_PX) * n;
            d2 == 0.0 || d2.sqrt() < limit
        })
        .collect();
    BinaryMask::new(h, w, data).expect("shape preserved")
}
