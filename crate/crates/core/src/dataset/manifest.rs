use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Foreground,
    Background,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Foreground => "foreground",
            PairKind::Background => "background",
        })
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "foreground" => Ok(PairKind::Foreground),
            "background" => Ok(PairKind::Background),
            _ => Err(Error::Format(format!("unknown pair kind `{s}`"))),
        }
    }
}

/// Foreground-to-background target ratio `fg:bg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub fg: u32,
    pub bg: u32,
}

impl Default for Ratio {
    fn default() -> Self {
        Self { fg: 4, bg: 1 }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.fg, self.bg)
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("ratio `{s}` is not of the form FG:BG with positive integers"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let fg: u32 = a.trim().parse().map_err(|_| bad())?;
        let bg: u32 = b.trim().parse().map_err(|_| bad())?;
        if fg == 0 || bg == 0 {
            return Err(bad());
        }
        Ok(Self { fg, bg })
    }
}

/// Indices (ascending) of the items kept so the kinds match `ratio`, and
/// whether one kind was missing. The majority kind is subsampled without
/// replacement; the minority is kept whole.
pub fn balance(kinds: &[PairKind], ratio: Ratio, seed: u64) -> (Vec<usize>, bool) {
    let fg: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == PairKind::Foreground).collect();
    let bg: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == PairKind::Background).collect();
    if fg.is_empty() || bg.is_empty() {
        return ((0..kinds.len()).collect(), !kinds.is_empty());
    }
    let (p, q) = (ratio.fg as u64, ratio.bg as u64);
    let (nf, nb) = (fg.len() as u64, bg.len() as u64);
    let (keep_fg, keep_bg) = if nf * q >= nb * p {
        (((nb * p) as f64 / q as f64).round() as u64, nb)
    } else {
        (nf, ((nf * q) as f64 / p as f64).round() as u64)
    };
    let mut r = rng::seeded(seed);
    let mut pick = |pool: &[usize], n: u64| -> Vec<usize> {
        let n = (n as usize).clamp(1, pool.len());
        index::sample(&mut r, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    };
    let mut kept = pick(&fg, keep_fg);
    kept.extend(pick(&bg, keep_bg));
    kept.sort_unstable();
    (kept, false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Pair directory relative to the dataset root.
    pub path: String,
    pub kind: PairKind,
    pub split: String,
}

/// Ordered pair list with a header of counts and the target ratio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub ratio: Ratio,
    pub seed: u64,
    /// Set when one kind was absent and the other was emitted whole.
    pub warning: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

const MAGIC: &str = "# paintflow-manifest v1";

impl Manifest {
    pub fn count(&self, kind: PairKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn header(&self) -> String {
        let mut h = format!(
            "{MAGIC} foreground={} background={} ratio={} seed={}",
            self.count(PairKind::Foreground),
            self.count(PairKind::Background),
            self.ratio,
            self.seed
        );
        if let Some(w) = &self.warning {
            h.push_str(&format!(" warning={w}"));
        }
        h
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.path, e.kind, e.split));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
        let fields = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format(format!("bad manifest header `{header}`")))?;
        let mut ratio = None;
        let mut seed = None;
        let mut warning = None;
        let mut counts = (None, None);
        for kv in fields.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field `{kv}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Format(format!("bad header count `{kv}`")));
            match k {
                "foreground" => counts.0 = Some(num(v)?),
                "background" => counts.1 = Some(num(v)?),
                "ratio" => ratio = Some(v.parse::<Ratio>().map_err(|e| Error::Format(e.to_string()))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::Format(format!("bad seed `{v}`")))?),
                "warning" => warning = Some(v.to_string()),
                _ => return Err(Error::Format(format!("unknown header field `{k}`"))),
            }
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let [path, kind, split] = parts[..] else {
                return Err(Error::Format(format!("manifest line {} is malformed", n + 2)));
            };
            entries.push(ManifestEntry {
                path: path.to_string(),
                kind: kind.parse()?,
                split: split.to_string(),
            });
        }
        let m = Self {
            ratio: ratio.ok_or_else(|| Error::Format("manifest header lacks ratio".into()))?,
            seed: seed.ok_or_else(|| Error::Format("manifest header lacks seed".into()))?,
            warning,
            entries,
        };
        if counts != (Some(m.count(PairKind::Foreground)), Some(m.count(PairKind::Background))) {
            return Err(Error::Format("manifest header counts disagree with its entries".into()));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Balances `(path, kind)` items into a manifest. Every `val_every`-th
/// survivor is tagged `val` (never when `val_every` is 0), the rest `train`.
pub fn balance_corpus(items: &[(String, PairKind)], ratio: Ratio, seed: u64, val_every: usize) -> Manifest {
    let kinds: Vec<PairKind> = items.iter().map(|(_, k)| *k).collect();
    let (kept, one_kind) = balance(&kinds, ratio, seed);
    let entries = kept
        .iter()
        .enumerate()
        .map(|(n, &i)| ManifestEntry {
            path: items[i].0.clone(),
            kind: items[i].1,
            split: if val_every > 0 && n % val_every == val_every - 1 { "val" } else { "train" }.to_string(),
        })
        .collect();
    Manifest {
        ratio,
        seed,
        warning: one_kind.then(|| "single-kind".to_string()),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PairKind::*;

    fn mixed(fg: usize, bg: usize) -> Vec<(String, PairKind)> {
        let mut v: Vec<_> = (0..fg).map(|i| (format!("f{i}"), Foreground)).collect();
        v.extend((0..bg).map(|i| (format!("b{i}"), Background)));
        v
    }

    #[test]
    fn ratio_parse() {
        assert_eq!("4:1".parse::<Ratio>().unwrap(), Ratio { fg: 4, bg: 1 });
        assert!("4".parse::<Ratio>().is_err());
        assert!("0:1".parse::<Ratio>().is_err());
        assert_eq!(Ratio::default().to_string(), "4:1");
    }

    #[test]
    fn balancing_examples() {
        let m = balance_corpus(&mixed(100, 100), Ratio::default(), 0, 0);
        assert_eq!((m.count(Foreground), m.count(Background)), (100, 25));
        let m = balance_corpus(&mixed(40, 10), Ratio::default(), 0, 0);
        assert_eq!(m.entries.len(), 50);
        let m = balance_corpus(&[], Ratio::default(), 0, 0);
        assert!(m.entries.is_empty() && m.warning.is_none());
        let m = balance_corpus(&mixed(5, 0), Ratio::default(), 0, 0);
        assert_eq!(m.entries.len(), 5);
        assert!(m.header().contains("warning=single-kind"));
    }

    #[test]
    fn survivors_keep_order_and_seed() {
        let it = mixed(30, 2);
        let a = balance_corpus(&it, Ratio::default(), 3, 0);
        let b = balance_corpus(&it, Ratio::default(), 3, 0);
        assert_eq!(a, b);
        let pos: Vec<usize> = a.entries.iter().map(|e| it.iter().position(|x| x.0 == e.path).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.count(Foreground), 8);
    }

    #[test]
    fn text_round_trip() {
        let m = balance_corpus(&mixed(8, 2), Ratio::default(), 1, 3);
        let text = m.to_text();
        assert!(text.starts_with("# paintflow-manifest v1 foreground=8 background=2 ratio=4:1 seed=1\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
        assert!(text.contains("\tval\n"));
        assert!(Manifest::parse("garbage").is_err());
        let tampered = text.replacen("foreground=8", "foreground=9", 1);
        assert!(Manifest::parse(&tampered).is_err());
    }
}
