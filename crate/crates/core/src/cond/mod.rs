//! Conditioning: channel concatenation of spatial controls, the reference
//! encoder producing context tokens, a frozen text stand-in, and fused
//! cross-attention with optional style alignment of keys and values.
//!
//! All parameters are registered in a [`ParamStore`] under the `cond/`
//! prefix so they share the model checkpoint.

mod encoder;
mod fusion;
mod text;

pub use encoder::SemanticEncoder;
pub use fusion::{fused_cross_attention, style_align_kv, FusionWeights};
pub use text::TextEncoder;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage, Resize, ResizeMode};
use crate::rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const PREFIX: &str = "cond/";

/// Seed of every frozen weight (encoder projection, class and position
/// embeddings, text table and text projections).
pub const FROZEN_SEED: u64 = 0;
pub const FROZEN_SCALE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondConfig {
    /// Side of the square the reference is resized to.
    pub ref_size: usize,
    pub patch: usize,
    pub embed_dim: usize,
    /// Learnable query tokens, and tokens per context embedding.
    pub n_q: usize,
    pub heads: usize,
    pub d_ctx: usize,
    /// Width of cross-attention keys, values and queries.
    pub attn_dim: usize,
    pub text_vocab: usize,
    /// Makes the fusion coefficient trainable; the text branch is then
    /// expected to be active during training.
    pub train_text_branch: bool,
    /// Seed of the trainable weights.
    pub seed: u64,
}

impl Default for CondConfig {
    fn default() -> Self {
        Self {
            ref_size: 32,
            patch: 4,
            embed_dim: 32,
            n_q: 8,
            heads: 8,
            d_ctx: 64,
            attn_dim: 32,
            text_vocab: 512,
            train_text_branch: false,
            seed: 0,
        }
    }
}

impl CondConfig {
    pub fn num_patches(&self) -> usize {
        (self.ref_size / self.patch).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("ref_size", self.ref_size),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("n_q", self.n_q),
            ("heads", self.heads),
            ("d_ctx", self.d_ctx),
            ("attn_dim", self.attn_dim),
            ("text_vocab", self.text_vocab),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("cond config: {name} must be positive")));
        }
        if self.ref_size % self.patch != 0 {
            return Err(Error::invalid(format!(
                "cond config: patch {} does not tile reference size {}",
                self.patch, self.ref_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "cond config: {} heads do not divide embed_dim {}",
                self.heads, self.embed_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextSource {
    Reference,
    Style,
    Text,
}

/// Context tokens `[n_q, d_ctx]` detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub tokens: Tensor,
    pub source: ContextSource,
}

impl ContextEmbedding {
    pub fn new(tokens: Tensor, source: ContextSource) -> Result<Self> {
        if tokens.rank() != 2 {
            return Err(Error::invalid(format!("context tokens must be rank 2, got {:?}", tokens.shape())));
        }
        if !tokens.is_finite() {
            return Err(Error::NonFinite("context tokens".into()));
        }
        Ok(Self { tokens, source })
    }

    /// Places the tokens in `g` as a constant.
    pub fn constant(&self, g: &mut Graph) -> Var {
        g.constant(self.tokens.clone())
    }
}

/// Output channels `[z_t; mask; sketch]` of a `[c, h, w]` latent.
pub fn concat_conditions(z_t: &Tensor, mask: &BinaryMask, sketch: &BinaryMask) -> Result<Tensor> {
    let s = z_t.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("latent must be [c, h, w], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    for (name, m) in [("mask", mask), ("sketch", sketch)] {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::invalid(format!(
                "{name} is {}x{}, latent is {h}x{w}",
                m.height(),
                m.width()
            )));
        }
    }
    let mut data = Vec::with_capacity(z_t.len() + 2 * h * w);
    data.extend_from_slice(z_t.data());
    for m in [mask, sketch] {
        data.extend(m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }));
    }
    Tensor::new([s[0] + 2, h, w], data)
}

/// Brings a mask and a sketch to the latent resolution: nearest for the
/// mask, bilinear then threshold 0.5 for the sketch.
pub fn resize_controls(mask: &BinaryMask, sketch: &BinaryMask, h: usize, w: usize) -> Result<(BinaryMask, BinaryMask)> {
    Ok((mask.resize(h, w, ResizeMode::Nearest)?, sketch.resize(h, w, ResizeMode::Bilinear)?))
}

/// The masked region of `image` (`mask ⊙ image`) cropped to the mask's
/// bounding box.
pub fn reference_crop(image: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
    let bbox = mask.bounding_box().ok_or_else(|| Error::invalid("reference mask is empty"))?;
    mask.apply(image)?.crop(bbox.y0, bbox.x0, bbox.height, bbox.width)
}

/// A seeded axis-aligned crop covering 25 to 75 % of the image area.
pub fn style_crop(image: &RasterImage, seed: u64) -> Result<RasterImage> {
    let (h, w) = (image.height(), image.width());
    let mut r = rng::seeded(seed);
    let area: f64 = r.random_range(0.25..=0.75);
    let hf: f64 = r.random_range(area..=1.0);
    let ch = ((hf * h as f64).round() as usize).clamp(1, h);
    let cw = ((area / hf * w as f64).round() as usize).clamp(1, w);
    let y0 = r.random_range(0..=h - ch);
    let x0 = r.random_range(0..=w - cw);
    image.crop(y0, x0, ch, cw)
}

fn register_frozen(store: &mut ParamStore, name: &str, shape: &[usize], stream: u64) -> Result<ParamId> {
    let mut r = rng::derived(FROZEN_SEED, stream);
    store.add(format!("{PREFIX}{name}"), Tensor::randn(shape.to_vec(), FROZEN_SCALE, &mut r), false)
}

/// Glorot-normal initialised trainable matrix.
fn register_weight(store: &mut ParamStore, name: &str, rows: usize, cols: usize, r: &mut rng::Rng) -> Result<ParamId> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    store.add(format!("{PREFIX}{name}"), Tensor::randn([rows, cols], std, r), true)
}

/// Every conditioning component of one model.
#[derive(Debug, Clone)]
pub struct Conditioner {
    pub config: CondConfig,
    pub encoder: SemanticEncoder,
    pub text: TextEncoder,
    pub fusion: FusionWeights,
    /// Replaces the reference context in the unconditional branch.
    pub null_ref: ParamId,
}

impl Conditioner {
    pub fn new(store: &mut ParamStore, config: CondConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::derived(config.seed, 0xc0de);
        let encoder = SemanticEncoder::new(store, &config, &mut r)?;
        let text = TextEncoder::new(store, &config)?;
        let fusion = FusionWeights::new(store, &config, &mut r)?;
        let null_ref = store.add(
            format!("{PREFIX}null_ref"),
            Tensor::randn([config.n_q, config.d_ctx], 1.0, &mut r),
            true,
        )?;
        Ok(Self {
            config,
            encoder,
            text,
            fusion,
            null_ref,
        })
    }

    pub fn encode_reference(&self, store: &ParamStore, x_ref: &RasterImage) -> Result<ContextEmbedding> {
        self.encoder.encode_reference(store, x_ref)
    }

    /// Encodes a style source; same encoder, tagged as style.
    pub fn encode_style(&self, store: &ParamStore, x_style: &RasterImage) -> Result<ContextEmbedding> {
        let mut c = self.encoder.encode_reference(store, x_style)?;
        c.source = ContextSource::Style;
        Ok(c)
    }

    pub fn encode_text(&self, store: &ParamStore, prompt: &str) -> Option<ContextEmbedding> {
        self.text.encode(store, prompt)
    }

    pub fn null_embedding(&self, store: &ParamStore) -> ContextEmbedding {
        ContextEmbedding {
            tokens: store.value(self.null_ref).clone(),
            source: ContextSource::Reference,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_layout() {
        let z = Tensor::from_fn([3, 4, 5], |i| i as f64 * 0.1 - 1.0);
        let mut m = BinaryMask::zeros(4, 5).unwrap();
        m.set(1, 2, true);
        let s = BinaryMask::zeros(4, 5).unwrap();
        let out = concat_conditions(&z, &m, &s).unwrap();
        assert_eq!(out.shape(), &[5, 4, 5]);
        assert_eq!(&out.data()[..60], z.data());
        assert_eq!(out.data()[60 + 7], 1.0);
        assert_eq!(out.data()[60..].iter().sum::<f64>(), 1.0);
        assert!(concat_conditions(&z, &BinaryMask::zeros(4, 4).unwrap(), &s).is_err());
    }

    #[test]
    fn style_crop_area_range() {
        let img = RasterImage::filled(40, 30, 3, 0.5).unwrap();
        for seed in 0..50 {
            let c = style_crop(&img, seed).unwrap();
            let frac = (c.height() * c.width()) as f64 / 1200.0;
            assert!((0.2..=0.8).contains(&frac), "{frac}");
        }
        assert_eq!(style_crop(&img, 3).unwrap(), style_crop(&img, 3).unwrap());
    }

    #[test]
    fn reference_crop_is_masked_bbox() {
        let img = RasterImage::from_fn(8, 8, 3, |y, x, _| (y * 8 + x) as f32 / 64.0).unwrap();
        let mut m = BinaryMask::zeros(8, 8).unwrap();
        m.set(2, 3, true);
        m.set(4, 5, true);
        let c = reference_crop(&img, &m).unwrap();
        assert_eq!((c.height(), c.width()), (3, 3));
        assert_eq!(c.get(0, 0, 0), img.get(2, 3, 0));
        assert_eq!(c.get(1, 1, 0), 0.0);
        assert!(reference_crop(&img, &BinaryMask::zeros(8, 8).unwrap()).is_err());
    }
}
