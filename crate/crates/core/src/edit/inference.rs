use std::sync::Arc;

use super::{quantize, EditRequest};
use crate::cond::style_crop;
use crate::diffusion::{ddim_sample, Conditions, SamplerConfig, ToyModel};
use crate::error::{Error, Result};
use crate::image::{RasterImage, Resize, ResizeMode};
use crate::rng;
use crate::sbr::{stylize, SbrConfig};

/// Produces a proposed canvas for an edit. Implementations must be pure
/// functions of their inputs.
pub trait Inference: Send + Sync {
    fn infer(&self, canvas: &RasterImage, req: &EditRequest) -> Result<RasterImage>;
}

/// Deterministic stand-in for the diffusion model: the reference (or the
/// canvas under the mask when none is given) is stylized at the size of the
/// mask's bounding box and blended into the masked pixels; sketch pixels
/// are darkened.
#[derive(Debug, Clone)]
pub struct StubInference {
    pub strokes_per_level: usize,
    pub blend: f32,
}

impl Default for StubInference {
    fn default() -> Self {
        Self {
            strokes_per_level: 60,
            blend: 0.7,
        }
    }
}

impl Inference for StubInference {
    fn infer(&self, canvas: &RasterImage, req: &EditRequest) -> Result<RasterImage> {
        let bbox = req.mask.bounding_box().ok_or_else(|| Error::invalid("mask is empty"))?;
        let source = match &req.reference {
            Some(r) => r.to_rgb(),
            None => canvas.crop(bbox.y0, bbox.x0, bbox.height, bbox.width)?.to_rgb(),
        };
        let source = source.resize(bbox.height, bbox.width, ResizeMode::Bilinear)?;
        let cfg = SbrConfig {
            strokes_per_level: self.strokes_per_level,
            seed: rng::derive_seed(req.sampler.seed.unwrap_or(0), 0x57b),
            ..SbrConfig::for_image_side(bbox.height.min(bbox.width))
        };
        let (painted, _) = stylize(&source, &cfg)?;
        let mut out = canvas.clone();
        for y in 0..bbox.height {
            for x in 0..bbox.width {
                let (cy, cx) = (bbox.y0 + y, bbox.x0 + x);
                if !req.mask.get(cy, cx) {
                    continue;
                }
                let dark = if req.sketch.get(cy, cx) { 0.25 } else { 1.0 };
                for c in 0..out.channels() {
                    let v = self.blend * painted.get(y, x, c) + (1.0 - self.blend) * canvas.get(cy, cx, c);
                    out.set(cy, cx, c, v * dark);
                }
            }
        }
        Ok(quantize(&out))
    }
}

/// Inference with a trained model. The style context is a seeded crop of
/// the current canvas; the text branch is active when the prompt has
/// tokens; a missing reference uses the null embedding.
#[derive(Clone)]
pub struct DiffusionInference {
    pub model: Arc<ToyModel>,
    pub defaults: SamplerConfig,
    pub style_alignment: bool,
}

impl DiffusionInference {
    pub fn new(model: Arc<ToyModel>) -> Self {
        Self {
            model,
            defaults: SamplerConfig::default(),
            style_alignment: true,
        }
    }
}

impl Inference for DiffusionInference {
    fn infer(&self, canvas: &RasterImage, req: &EditRequest) -> Result<RasterImage> {
        let m = &self.model;
        let cfg = req.sampler.apply(&self.defaults);
        let c_ref = match &req.reference {
            Some(r) => m.cond.encode_reference(&m.store, r)?,
            None => m.cond.null_embedding(&m.store),
        };
        let c_style = if self.style_alignment {
            let crop = style_crop(canvas, rng::derive_seed(cfg.seed, 0x5c))?;
            Some(m.cond.encode_style(&m.store, &crop)?)
        } else {
            None
        };
        let cond = Conditions {
            c_ref,
            c_style,
            c_t: m.cond.encode_text(&m.store, &req.prompt),
        };
        let out = ddim_sample(m.as_ref(), &req.mask, &req.sketch, &cond, canvas, &cfg)?;
        Ok(quantize(&out))
    }
}
