use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::morph::value_noise;
use crate::image::{io, BinaryMask, RasterImage};
use crate::rng;

/// One corpus image with its sidecar metadata. Paths are relative to the
/// corpus root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub image_path: PathBuf,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

impl CorpusRecord {
    /// Stem of the image file, used to name pair directories.
    pub fn stem(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Reads every `meta/*.json` sidecar under `root`, sorted by file name.
pub fn load_corpus(root: &Path) -> Result<Vec<CorpusRecord>> {
    let meta = root.join("meta");
    let entries = std::fs::read_dir(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn write_record(root: &Path, record: &CorpusRecord) -> Result<()> {
    let meta = root.join("meta");
    std::fs::create_dir_all(&meta).map_err(|e| Error::io(&meta, e))?;
    let path = meta.join(format!("{}.json", record.stem()));
    let json = serde_json::to_string_pretty(record).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    /// Every `background_every`-th record (offset 2) has no subject.
    pub background_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 64,
            size: 24,
            background_every: 5,
            seed: 0,
        }
    }
}

const COLORS: [(&str, [f32; 3]); 6] = [
    ("red", [0.85, 0.15, 0.12]),
    ("blue", [0.15, 0.25, 0.8]),
    ("yellow", [0.95, 0.85, 0.2]),
    ("green", [0.2, 0.65, 0.25]),
    ("purple", [0.55, 0.2, 0.65]),
    ("orange", [0.95, 0.55, 0.1]),
];

const SHAPES: [&str; 4] = ["circle", "square", "triangle", "ellipse"];
const TEXTURES: [&str; 3] = ["striped", "mottled", "checkered"];

fn texture(size: usize, kind: usize, seed: u64) -> RasterImage {
    let mut r = rng::seeded(seed);
    let base: [f32; 3] = std::array::from_fn(|_| r.random_range(0.35..0.9));
    let alt: [f32; 3] = std::array::from_fn(|c| (base[c] + r.random_range(-0.25..0.25)).clamp(0.0, 1.0));
    let period = r.random_range(3..7usize);
    let angle: f64 = r.random_range(0.0..std::f64::consts::PI);
    let noise = value_noise(size, size, 4, rng::derive_seed(seed, 1));
    RasterImage::from_fn(size, size, 3, |y, x, c| {
        let t = match kind {
            0 => {
                let u = x as f64 * angle.cos() + y as f64 * angle.sin();
                if (u / period as f64).floor() as i64 % 2 == 0 { 0.0 } else { 1.0 }
            }
            1 => noise[y * size + x],
            _ => ((x / period + y / period) % 2) as f64,
        } as f32;
        base[c] * (1.0 - t) + alt[c] * t
    })
    .expect("texture values stay in range")
}

fn shape_mask(size: usize, shape: usize, r: &mut rng::Rng) -> BinaryMask {
    let s = size as f64;
    let radius = r.random_range(0.15..0.3) * s;
    let cy = r.random_range(radius..s - radius);
    let cx = r.random_range(radius..s - radius);
    let squash = r.random_range(0.5..0.8);
    BinaryMask::from_fn(size, size, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        match shape {
            0 => dy * dy + dx * dx <= radius * radius,
            1 => dy.abs() <= radius * 0.85 && dx.abs() <= radius * 0.85,
            2 => dy <= radius * 0.7 && dy >= -radius && dx.abs() <= (dy + radius) * 0.6,
            _ => (dy / (radius * squash)).powi(2) + (dx / radius).powi(2) <= 1.0,
        }
    })
    .expect("nonzero size")
}

/// Writes a corpus of coloured shapes on textured backgrounds under `root`
/// (`images/`, `masks/`, `meta/`). Shape records carry a subject and an
/// exact mask; background records carry neither.
pub fn synth_corpus(root: &Path, cfg: &SynthConfig) -> Result<Vec<CorpusRecord>> {
    if cfg.size < 8 || cfg.count == 0 {
        return Err(Error::invalid("synthetic corpus needs count >= 1 and size >= 8"));
    }
    for dir in ["images", "masks", "meta"] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let seed = rng::derive_seed(cfg.seed, i as u64);
        let mut r = rng::seeded(seed);
        let tex = r.random_range(0..TEXTURES.len());
        let mut img = texture(cfg.size, tex, rng::derive_seed(seed, 7));
        let stem = format!("synth_{i:04}");
        let background = cfg.background_every > 0 && i % cfg.background_every == 2 % cfg.background_every;
        let shape = r.random_range(0..SHAPES.len());
        let (color_name, color) = COLORS[r.random_range(0..COLORS.len())];
        let mask = shape_mask(cfg.size, shape, &mut r);
        let record = if background {
            CorpusRecord {
                image_path: PathBuf::from(format!("images/{stem}.png")),
                prompt: format!("a {} background", TEXTURES[tex]),
                subject: None,
                mask_path: None,
            }
        } else {
            for y in 0..cfg.size {
                for x in 0..cfg.size {
                    if mask.get(y, x) {
                        let shade = 0.9 + 0.1 * ((x + y) % 3) as f32 / 2.0;
                        for c in 0..3 {
                            img.set(y, x, c, color[c] * shade);
                        }
                    }
                }
            }
            let mask_path = PathBuf::from(format!("masks/{stem}.png"));
            io::save_mask_png(&mask, root.join(&mask_path))?;
            CorpusRecord {
                image_path: PathBuf::from(format!("images/{stem}.png")),
                prompt: format!("a {color_name} {} on a {} background", SHAPES[shape], TEXTURES[tex]),
                subject: Some(SHAPES[shape].to_string()),
                mask_path: Some(mask_path),
            }
        };
        io::save_png(&img, root.join(&record.image_path))?;
        write_record(root, &record)?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            count: 10,
            ..Default::default()
        };
        let written = synth_corpus(dir.path(), &cfg).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(written, loaded);
        let bg = loaded.iter().filter(|r| r.subject.is_none()).count();
        assert_eq!(bg, 2);
        for r in &loaded {
            assert_eq!(r.subject.is_some(), r.mask_path.is_some());
            if let Some(m) = &r.mask_path {
                let m = io::load_mask_png(dir.path().join(m)).unwrap();
                assert!(!m.is_empty());
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SynthConfig {
            count: 4,
            ..Default::default()
        };
        synth_corpus(a.path(), &cfg).unwrap();
        synth_corpus(b.path(), &cfg).unwrap();
        for i in 0..4 {
            let p = format!("images/synth_{i:04}.png");
            assert_eq!(std::fs::read(a.path().join(&p)).unwrap(), std::fs::read(b.path().join(&p)).unwrap());
        }
    }
}
