//! Dataset preparation: corpus records become training pairs of a masked
//! source, a sketch, a mask, a stylized target and a prompt.
//!
//! Records with a subject mask yield foreground pairs (the mask is
//! randomly distorted); records without one yield background pairs with a
//! rectangular mask over half the image.

mod corpus;
mod manifest;

pub use corpus::{load_corpus, synth_corpus, write_record, CorpusRecord, SynthConfig};
pub use manifest::{balance, balance_corpus, Manifest, ManifestEntry, PairKind, Ratio};

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{distort_mask, edge_detect, io, BinaryMask, EdgeConfig, RasterImage, Resize, ResizeMode};
use crate::rng;
use crate::sbr::{stylize, SbrConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub masked_source: RasterImage,
    pub sketch: BinaryMask,
    pub mask: BinaryMask,
    pub prompt: String,
    pub target: RasterImage,
    pub kind: PairKind,
    pub seed: u64,
}

impl TrainingPair {
    /// Checks equal shapes, sketch ⊆ mask and a zero masked source inside
    /// the mask.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.mask.shape();
        let shapes_ok = self.sketch.shape() == (h, w)
            && (self.masked_source.height(), self.masked_source.width()) == (h, w)
            && self.masked_source.shape() == self.target.shape();
        if !shapes_ok {
            return Err(Error::invalid("pair images and masks differ in shape"));
        }
        if !self.mask.contains(&self.sketch) {
            return Err(Error::invalid("sketch has pixels outside the mask"));
        }
        if self.mask.is_empty() {
            return Err(Error::invalid("mask is empty"));
        }
        for y in 0..h {
            for x in 0..w {
                if self.mask.get(y, x) && self.masked_source.pixel(y, x).iter().any(|&v| v != 0.0) {
                    return Err(Error::invalid(format!("masked source is non-zero inside the mask at ({y}, {x})")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ratio: Ratio,
    pub seed: u64,
    /// Images are resized to this square side first when set.
    pub size: Option<usize>,
    pub foreground_edges: EdgeConfig,
    pub background_edges: EdgeConfig,
    /// Every n-th surviving pair is tagged `val`; 0 tags all `train`.
    pub val_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ratio: Ratio::default(),
            seed: 0,
            size: None,
            foreground_edges: EdgeConfig::default(),
            background_edges: EdgeConfig::detail(),
            val_every: 0,
        }
    }
}

/// Axis-aligned rectangle covering half the image area: a height is drawn
/// from the range that admits a fitting width, the width is rounded from
/// the area, and the position is uniform.
pub fn random_background_crop(height: usize, width: usize, seed: u64) -> Result<BinaryMask> {
    if height < 2 && width < 2 || height == 0 || width == 0 {
        return Err(Error::invalid(format!("image {height}x{width} is too small for a background crop")));
    }
    let target = (height * width) as f64 / 2.0;
    let mut r = rng::seeded(seed);
    let min_h = ((target / width as f64).ceil() as usize).max(1);
    let h = r.random_range(min_h..=height);
    let w = ((target / h as f64).round() as usize).clamp(1, width);
    let y0 = r.random_range(0..=height - h);
    let x0 = r.random_range(0..=width - w);
    BinaryMask::from_fn(height, width, |y, x| (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x))
}

/// Builds one pair from an already loaded image and optional subject mask.
pub fn build_pair(
    image: &RasterImage,
    subject_mask: Option<&BinaryMask>,
    prompt: &str,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<TrainingPair> {
    let image = image.to_rgb();
    let (h, w) = (image.height(), image.width());
    let (kind, mask, edges_cfg) = match subject_mask {
        Some(m) => {
            if m.shape() != (h, w) {
                return Err(Error::invalid(format!("mask {:?} does not match image {h}x{w}", m.shape())));
            }
            if m.is_empty() {
                return Err(Error::invalid("subject mask is empty"));
            }
            (PairKind::Foreground, distort_mask(m, rng::derive_seed(seed, 1)), &cfg.foreground_edges)
        }
        None => (
            PairKind::Background,
            random_background_crop(h, w, rng::derive_seed(seed, 2))?,
            &cfg.background_edges,
        ),
    };
    let sbr = SbrConfig {
        seed: rng::derive_seed(seed, 3),
        ..SbrConfig::for_image_side(h.min(w))
    };
    let (target, _) = stylize(&image, &sbr)?;
    let edges = edge_detect(&image, edges_cfg)?;
    Ok(TrainingPair {
        masked_source: mask.not().apply(&image)?,
        sketch: mask.and(&edges)?,
        mask,
        prompt: prompt.to_string(),
        target,
        kind,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PairMeta {
    prompt: String,
    kind: PairKind,
    seed: u64,
    source: String,
}

pub fn write_pair(dir: &Path, pair: &TrainingPair, source: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::save_png(&pair.masked_source, dir.join("masked_source.png"))?;
    io::save_png(&pair.target, dir.join("target.png"))?;
    io::save_mask_png(&pair.mask, dir.join("mask.png"))?;
    io::save_mask_png(&pair.sketch, dir.join("sketch.png"))?;
    let meta = PairMeta {
        prompt: pair.prompt.clone(),
        kind: pair.kind,
        seed: pair.seed,
        source: source.to_string(),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_pair(dir: &Path) -> Result<TrainingPair> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: PairMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(TrainingPair {
        masked_source: io::load_png(dir.join("masked_source.png"))?,
        sketch: io::load_mask_png(dir.join("sketch.png"))?,
        mask: io::load_mask_png(dir.join("mask.png"))?,
        prompt: meta.prompt,
        target: io::load_png(dir.join("target.png"))?,
        kind: meta.kind,
        seed: meta.seed,
    })
}

/// Loads every pair of a manifest, in manifest order.
pub fn load_manifest_pairs(root: &Path, manifest: &Manifest) -> Result<Vec<TrainingPair>> {
    manifest.entries.iter().map(|e| load_pair(&root.join(&e.path))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PrepareReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub built: usize,
    pub skipped: Vec<Skipped>,
}

fn load_record(corpus: &Path, rec: &CorpusRecord, size: Option<usize>) -> Result<(RasterImage, Option<BinaryMask>)> {
    if rec.subject.is_some() && rec.mask_path.is_none() {
        return Err(Error::invalid("record names a subject but has no mask"));
    }
    let mut img = io::load_png(corpus.join(&rec.image_path))?;
    let mut mask = rec.mask_path.as_ref().map(|p| io::load_mask_png(corpus.join(p))).transpose()?;
    if let Some(s) = size {
        img = img.resize(s, s, ResizeMode::Bilinear)?;
        mask = mask.map(|m| m.resize(s, s, ResizeMode::Nearest)).transpose()?;
    }
    Ok((img, mask))
}

/// Runs the whole pipeline: reads the corpus, builds pairs in parallel,
/// balances them, writes surviving pairs under `out/pairs/` and the
/// manifest to `out/manifest.txt`. Output is identical for any worker
/// count.
pub fn prepare_dataset(corpus: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PrepareReport> {
    let records = load_corpus(corpus)?;
    let results: Vec<Result<TrainingPair>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let (img, mask) = load_record(corpus, rec, cfg.size)?;
            build_pair(&img, mask.as_ref(), &rec.prompt, rng::derive_seed(cfg.seed, i as u64), cfg)
        })
        .collect();
    let mut built = Vec::new();
    let mut skipped = Vec::new();
    for (i, (rec, res)) in records.iter().zip(results).enumerate() {
        let source = rec.image_path.to_string_lossy().into_owned();
        match res {
            Ok(pair) => built.push((format!("pairs/{i:05}_{}", rec.stem()), source, pair)),
            Err(e) => {
                log::warn!("skipping {source}: {e}");
                skipped.push(Skipped {
                    source,
                    reason: e.to_string(),
                });
            }
        }
    }
    let items: Vec<(String, PairKind)> = built.iter().map(|(p, _, pair)| (p.clone(), pair.kind)).collect();
    let manifest = balance_corpus(&items, cfg.ratio, cfg.seed, cfg.val_every);
    let pairs_dir = out.join("pairs");
    if pairs_dir.exists() {
        std::fs::remove_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
    }
    let keep: std::collections::HashSet<&str> = manifest.entries.iter().map(|e| e.path.as_str()).collect();
    built
        .par_iter()
        .filter(|(p, _, _)| keep.contains(p.as_str()))
        .try_for_each(|(p, source, pair)| write_pair(&out.join(p), pair, source))?;
    let manifest_path = out.join("manifest.txt");
    manifest.write(&manifest_path)?;
    Ok(PrepareReport {
        manifest,
        manifest_path,
        built: built.len(),
        skipped,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checked: usize,
    pub failures: Vec<(String, String)>,
}

/// Loads and validates every pair listed in a manifest.
pub fn validate_manifest(root: &Path, manifest: &Manifest) -> ValidationReport {
    let failures: Vec<(String, String)> = manifest
        .entries
        .par_iter()
        .filter_map(|e| match load_pair(&root.join(&e.path)).and_then(|p| {
            p.validate()?;
            if p.kind != e.kind {
                return Err(Error::invalid("pair kind differs from manifest"));
            }
            Ok(())
        }) {
            Ok(()) => None,
            Err(err) => Some((e.path.clone(), err.to_string())),
        })
        .collect();
    ValidationReport {
        checked: manifest.entries.len(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64) -> RasterImage {
        let mut r = rng::seeded(seed);
        RasterImage::from_fn(24, 24, 3, |y, x, _| if (y / 6 + x / 6) % 2 == 0 { 0.2 } else { 0.8 } + r.random_range(0.0..0.1))
            .unwrap()
    }

    #[test]
    fn background_crop_area() {
        for seed in 0..30 {
            let m = random_background_crop(100, 100, seed).unwrap();
            assert!((m.count() as i64 - 5000).abs() <= 100, "{}", m.count());
            let b = m.bounding_box().unwrap();
            assert_eq!(b.height * b.width, m.count());
        }
        assert_eq!(random_background_crop(2, 2, 5).unwrap().count(), 2);
        assert_eq!(random_background_crop(37, 11, 9).unwrap(), random_background_crop(37, 11, 9).unwrap());
        assert!(random_background_crop(1, 1, 0).is_err());
    }

    #[test]
    fn full_mask_zeroes_source() {
        let img = image(0);
        let ones = BinaryMask::ones(24, 24).unwrap();
        let p = build_pair(&img, Some(&ones), "x", 0, &PipelineConfig::default()).unwrap();
        assert!(p.masked_source.data().iter().all(|&v| v == 0.0));
        p.validate().unwrap();
    }

    #[test]
    fn sketch_is_mask_and_edges() {
        let img = image(1);
        let subject = BinaryMask::from_fn(24, 24, |y, x| (6..14).contains(&y) && (5..15).contains(&x)).unwrap();
        let cfg = PipelineConfig::default();
        let p = build_pair(&img, Some(&subject), "x", 4, &cfg).unwrap();
        assert_eq!(p.kind, PairKind::Foreground);
        let edges = edge_detect(&img, &cfg.foreground_edges).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                assert_eq!(p.sketch.get(y, x), p.mask.get(y, x) && edges.get(y, x));
            }
        }
        assert!(p.mask.contains(&subject));
        p.validate().unwrap();
        let bg = build_pair(&img, None, "x", 4, &cfg).unwrap();
        assert_eq!(bg.kind, PairKind::Background);
        assert!((bg.mask.count() as i64 - 288).abs() <= 24);
    }

    #[test]
    fn mismatched_mask_rejected() {
        let m = BinaryMask::ones(10, 10).unwrap();
        assert!(build_pair(&image(0), Some(&m), "x", 0, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn validator_catches_violations() {
        let img = image(2);
        let mut p = build_pair(&img, None, "x", 0, &PipelineConfig::default()).unwrap();
        let (y, x) = (0..24 * 24).map(|i| (i / 24, i % 24)).find(|&(y, x)| !p.mask.get(y, x)).unwrap();
        p.sketch.set(y, x, true);
        assert!(p.validate().is_err());
    }
}
